"""Feature/label files, dataset manifests, LOUO folds and synthetic gesture streams.

File formats
------------
``<trial>.feat``  one frame per line, D decimal numbers separated by spaces
                  or commas.  ``nan``/``inf`` tokens are rejected.
``<trial>.lbl``   one label token per line, same number of lines as frames.
``manifest.tsv``  one trial per line: ``trial_id user feature_path label_path``
                  (whitespace separated, paths relative to the manifest,
                  ``#`` starts a comment line).
``vocab.txt``     ordered class names, one per line; line i is class id i.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

_SPLIT = re.compile(r"[,\s]+")


class DataError(ValueError):
    """Malformed or inconsistent dataset files; the message names file and line."""


class ClassVocab:
    """Ordered gesture names mapped to contiguous ids.

    A vocab created with ``frozen=False`` grows when it meets unseen names.
    """

    def __init__(self, names: Iterable[str] = (), frozen: bool = True):
        self.names: list[str] = []
        self._ids: dict[str, int] = {}
        for n in names:
            self.add(n)
        self.frozen = frozen

    def add(self, name: str) -> int:
        if name in self._ids:
            raise DataError(f"duplicate class name {name!r}")
        self._ids[name] = len(self.names)
        self.names.append(name)
        return self._ids[name]

    def id(self, name: str) -> int:
        if name not in self._ids:
            if self.frozen:
                raise KeyError(name)
            return self.add(name)
        return self._ids[name]

    def __len__(self):
        return len(self.names)

    def __eq__(self, other):
        return isinstance(other, ClassVocab) and self.names == other.names

    def save(self, path) -> None:
        Path(path).write_text("".join(f"{n}\n" for n in self.names))

    @classmethod
    def load(cls, path) -> "ClassVocab":
        names = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
        return cls(names)


@dataclass
class Trial:
    id: str
    user: str
    features: np.ndarray
    labels: np.ndarray
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] != len(self.labels):
            raise DataError(f"trial {self.id}: {self.features.shape[0]} feature frames vs "
                            f"{len(self.labels)} labels")

    @property
    def T(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class Fold:
    user: str
    train: tuple[str, ...]
    test: tuple[str, ...]


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[Fold, ...]

    def __len__(self):
        return len(self.folds)

    def __iter__(self):
        return iter(self.folds)


def read_features(path) -> np.ndarray:
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            toks = [t for t in _SPLIT.split(line) if t]
            try:
                row = [float(t) for t in toks]
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric feature value") from None
            if not np.all(np.isfinite(row)):
                raise DataError(f"{path}:{lineno}: NaN or Inf feature value")
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataError(f"{path}:{lineno}: expected {width} values, found {len(row)}")
            rows.append(row)
    if not rows:
        raise DataError(f"{path}: no feature frames")
    return np.array(rows, dtype=np.float64)


def read_labels(path, vocab: ClassVocab) -> np.ndarray:
    ids = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            tok = line.strip()
            if not tok:
                continue
            if len(tok.split()) != 1:
                raise DataError(f"{path}:{lineno}: expected one label token per line")
            try:
                ids.append(vocab.id(tok))
            except KeyError:
                raise DataError(f"{path}:{lineno}: unknown label {tok!r}") from None
    return np.array(ids, dtype=np.int64)


def load_trial(feature_path, label_path, vocab: ClassVocab, trial_id: str | None = None,
               user: str = "", truncate: bool = False) -> Trial:
    """Read one trial; a frame/label count mismatch is an error unless ``truncate``."""
    feats = read_features(feature_path)
    labels = read_labels(label_path, vocab)
    warnings = []
    if len(labels) != feats.shape[0]:
        if not truncate:
            raise DataError(f"{feature_path}: {feats.shape[0]} feature frames but "
                            f"{len(labels)} labels in {label_path}")
        n = min(len(labels), feats.shape[0])
        msg = f"truncated {feature_path} ({feats.shape[0]} frames) / {label_path} ({len(labels)} labels) to {n}"
        log.warning(msg)
        warnings.append(msg)
        feats, labels = feats[:n], labels[:n]
    tid = trial_id if trial_id is not None else Path(feature_path).stem
    return Trial(tid, user, feats, labels, warnings)


def save_trial(trial: Trial, directory, vocab: ClassVocab) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    feat_path = directory / f"{trial.id}.feat"
    lbl_path = directory / f"{trial.id}.lbl"
    feat_path.write_text("".join(" ".join(repr(float(v)) for v in row) + "\n"
                                 for row in trial.features))
    lbl_path.write_text("".join(f"{vocab.names[i]}\n" for i in trial.labels))
    return feat_path, lbl_path


def write_dataset(trials: Sequence[Trial], directory, vocab: ClassVocab) -> Path:
    """Write trials, ``vocab.txt`` and ``manifest.tsv`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = ["# trial user features labels\n"]
    for tr in trials:
        fp, lp = save_trial(tr, directory, vocab)
        lines.append(f"{tr.id} {tr.user} {fp.name} {lp.name}\n")
    vocab.save(directory / "vocab.txt")
    manifest = directory / "manifest.tsv"
    manifest.write_text("".join(lines))
    return manifest


def load_manifest(path, vocab: ClassVocab | None = None,
                  truncate: bool = False) -> tuple[list[Trial], ClassVocab]:
    """Load every trial listed in a manifest.

    Without an explicit vocab, ``vocab.txt`` next to the manifest is used
    when present; otherwise one is built from the label files.
    """
    path = Path(path)
    base = path.parent
    if vocab is None:
        vocab = ClassVocab.load(base / "vocab.txt") if (base / "vocab.txt").exists() \
            else ClassVocab(frozen=False)
    trials, seen = [], set()
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise DataError(f"{path}:{lineno}: expected 'trial user features labels'")
        tid, user, fp, lp = parts
        if tid in seen:
            raise DataError(f"{path}:{lineno}: duplicate trial id {tid!r}")
        seen.add(tid)
        trials.append(load_trial(base / fp, base / lp, vocab, tid, user, truncate))
    if not trials:
        raise DataError(f"{path}: manifest lists no trials")
    dims = {t.features.shape[1] for t in trials}
    if len(dims) != 1:
        raise DataError(f"{path}: trials disagree on feature dimension {sorted(dims)}")
    vocab.frozen = True
    return trials, vocab


def build_louo(trials: Sequence[Trial]) -> FoldPlan:
    """One fold per user (sorted by user id) holding out all of that user's trials."""
    users = sorted({t.user for t in trials})
    if len(users) < 2:
        raise DataError("leave-one-user-out needs at least two distinct users")
    folds = []
    for u in users:
        test = tuple(t.id for t in trials if t.user == u)
        train = tuple(t.id for t in trials if t.user != u)
        folds.append(Fold(u, train, test))
    return FoldPlan(tuple(folds))


def synth_dataset(num_users: int, trials_per_user: int, num_classes: int,
                  mean_segment_len: float, noise_level: float, seed: int,
                  input_dim: int = 16, num_frames: int = 300, drift: float = 0.5,
                  user_shift: float = 0.1) -> tuple[list[Trial], ClassVocab]:
    """Synthetic gesture streams.

    Labels follow a Markov chain over segments with geometric lengths of the
    given mean; the next segment always switches class.  Each frame is its
    class prototype (shifted slightly per user) plus Gaussian noise plus a
    slowly wandering drift vector, both scaled by ``noise_level``.
    """
    if min(num_users, trials_per_user, num_classes, input_dim, num_frames) < 1 or mean_segment_len < 1:
        raise ValueError("counts and lengths must be positive")
    if noise_level < 0:
        raise ValueError("noise_level must be non-negative")
    rng = np.random.default_rng(seed)
    prototypes = rng.standard_normal((num_classes, input_dim))
    vocab = ClassVocab(f"G{c + 1}" for c in range(num_classes))
    trials = []
    for u in range(num_users):
        user = f"U{u + 1:02d}"
        protos = prototypes + user_shift * rng.standard_normal(prototypes.shape)
        for k in range(trials_per_user):
            T = int(round(num_frames * rng.uniform(0.9, 1.1)))
            labels = np.empty(T, dtype=np.int64)
            t, cls = 0, int(rng.integers(num_classes))
            while t < T:
                length = int(rng.geometric(1.0 / mean_segment_len))
                labels[t:t + length] = cls
                t += length
                if num_classes > 1:
                    cls = int((cls + rng.integers(1, num_classes)) % num_classes)
            walk = np.cumsum(rng.standard_normal((T, input_dim)), axis=0)
            walk -= walk.mean(axis=0)
            walk /= max(np.abs(walk).max(), 1e-12)
            noise = rng.standard_normal((T, input_dim))
            feats = protos[labels] + noise_level * (noise + drift * walk)
            trials.append(Trial(f"{user}_T{k + 1:02d}", user, feats, labels))
    return trials, vocab
