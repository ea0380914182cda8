"""Frame-wise and segmental evaluation of frame label sequences."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

THRESHOLDS = (0.10, 0.25, 0.50)


@dataclass(frozen=True)
class Segment:
    label: int
    start: int  # inclusive
    end: int    # exclusive

    def __post_init__(self):
        if self.start >= self.end:
            raise ValueError(f"empty segment {self}")

    @property
    def length(self) -> int:
        return self.end - self.start


def to_segments(labels: Sequence) -> list[Segment]:
    """Run-length encode ``labels`` into maximal constant-label segments."""
    labels = list(labels)
    if not labels:
        raise ValueError("cannot segment an empty label sequence")
    segments = []
    start = 0
    for t in range(1, len(labels) + 1):
        if t == len(labels) or labels[t] != labels[start]:
            segments.append(Segment(labels[start], start, t))
            start = t
    return segments


def from_segments(segments: Iterable[Segment]) -> list:
    out = []
    for seg in segments:
        out.extend([seg.label] * seg.length)
    return out


def _check_pair(pred, truth):
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.ndim != 1 or truth.ndim != 1:
        raise ValueError("label sequences must be one-dimensional")
    if len(pred) != len(truth):
        raise ValueError(f"length mismatch: {len(pred)} predicted vs {len(truth)} true frames")
    if len(truth) == 0:
        raise ValueError("empty label sequences")
    return pred, truth


def frame_accuracy(pred, truth) -> float:
    pred, truth = _check_pair(pred, truth)
    return 100.0 * float(np.sum(pred == truth)) / len(truth)


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Unit-cost insert/delete/substitute distance."""
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


def edit_score(pred, truth) -> float:
    pred, truth = _check_pair(pred, truth)
    p = [s.label for s in to_segments(pred.tolist())]
    t = [s.label for s in to_segments(truth.tolist())]
    return 100.0 * (1.0 - levenshtein(p, t) / max(len(p), len(t)))


def f1_counts(pred, truth, threshold: float) -> tuple[int, int, int]:
    """(TP, FP, FN) of segment matching at IoU strictly above ``threshold``.

    Predicted segments are visited in temporal order; each one claims the
    unclaimed same-label true segment it overlaps best.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    pred, truth = _check_pair(pred, truth)
    p_segs = to_segments(pred.tolist())
    t_segs = to_segments(truth.tolist())
    used = [False] * len(t_segs)
    tp = fp = 0
    for ps in p_segs:
        best, best_iou = -1, 0.0
        for i, ts in enumerate(t_segs):
            if used[i] or ts.label != ps.label:
                continue
            inter = min(ps.end, ts.end) - max(ps.start, ts.start)
            if inter <= 0:
                continue
            iou = inter / (max(ps.end, ts.end) - min(ps.start, ts.start))
            if iou > best_iou:
                best, best_iou = i, iou
        if best >= 0 and best_iou > threshold:
            used[best] = True
            tp += 1
        else:
            fp += 1
    return tp, fp, len(t_segs) - sum(used)


def f1_at(pred, truth, threshold: float) -> float:
    tp, fp, fn = f1_counts(pred, truth, threshold)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return 100.0 * 2 * precision * recall / (precision + recall)


@dataclass
class MetricsReport:
    frame_accuracy: float
    edit_score: float
    f1: dict[float, float] = field(default_factory=dict)
    frames: int = 0

    def fields(self) -> dict[str, float]:
        out = {"acc": self.frame_accuracy, "edit": self.edit_score}
        for th in THRESHOLDS:
            out[f"f1_{round(th * 100):d}"] = self.f1[th]
        return out

    def serialize(self, **prefix) -> str:
        """``key=value`` line with every metric as a percent with two decimals."""
        head = [f"{k}={v}" for k, v in prefix.items()]
        return " ".join(head + [f"{k}={v:.2f}" for k, v in self.fields().items()])

    @classmethod
    def parse(cls, line: str) -> "MetricsReport":
        kv = dict(tok.split("=", 1) for tok in line.split())
        f1 = {th: float(kv[f"f1_{round(th * 100):d}"]) for th in THRESHOLDS}
        return cls(float(kv["acc"]), float(kv["edit"]), f1)


def evaluate(pred, truth) -> MetricsReport:
    pred, truth = _check_pair(pred, truth)
    return MetricsReport(frame_accuracy(pred, truth), edit_score(pred, truth),
                         {th: f1_at(pred, truth, th) for th in THRESHOLDS}, len(truth))


def aggregate(reports: Sequence[MetricsReport], weights: Sequence[float] | None = None) -> MetricsReport:
    """Frame-weighted frame accuracy; unweighted means of edit and F1.

    ``weights`` default to each report's frame count.
    """
    if not reports:
        raise ValueError("cannot aggregate an empty list of reports")
    if weights is None:
        weights = [r.frames for r in reports]
    w = np.asarray(weights, dtype=np.float64)
    if w.sum() <= 0:
        w = np.ones(len(reports))
    acc = float(np.dot(w, [r.frame_accuracy for r in reports]) / w.sum())
    edit = float(np.mean([r.edit_score for r in reports]))
    f1 = {th: float(np.mean([r.f1[th] for r in reports])) for th in THRESHOLDS}
    return MetricsReport(acc, edit, f1, int(sum(r.frames for r in reports)))


def aggregate_groups(groups: Sequence[Sequence[MetricsReport]]) -> MetricsReport:
    """Aggregate each group (e.g. a fold) first, then average the group results."""
    per_group = [aggregate(g) for g in groups]
    return aggregate(per_group, weights=[1.0] * len(per_group))


def format_table(rows: Sequence[tuple[str, MetricsReport]], title: str = "") -> str:
    """Column-aligned human-readable table of reports."""
    width = max([len(name) for name, _ in rows] + [len(title), 8])
    cols = ["Acc.", "Edit", "F1@10", "F1@25", "F1@50"]
    lines = [f"{title:<{width}}  " + "  ".join(f"{c:>6}" for c in cols)]
    for name, r in rows:
        vals = [r.frame_accuracy, r.edit_score] + [r.f1[th] for th in THRESHOLDS]
        lines.append(f"{name:<{width}}  " + "  ".join(f"{v:6.2f}" for v in vals))
    return "\n".join(lines)
