"""Command-line entry point: ``symdil <command> [flags]``.

Every command resolves its settings as built-in defaults, overridden by a
flat ``key=value`` config file (``--config``), overridden by explicit flags.
Keys in the config file are the long flag names without dashes prefix
(``epochs=30``, ``no-pooling=true``).  The resolved settings are written to
``<out>/config.resolved`` in the same format, so ``--config`` on that file
replays the run.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import gradchecks
from .autodiff import GradcheckReport
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import ClassVocab, DataError, load_manifest, read_features, synth_dataset, write_dataset
from .metrics import aggregate, evaluate, format_table, to_segments
from .model import VARIANTS, ModelConfig, predict
from .runner import ABLATION_VARIANTS, LAYER_SWEEP, ablation_rows, louo, majority_baseline
from .tensor import ShapeError
from .training import TrainConfig, TrainingError, train

log = logging.getLogger("symdil")


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _int_list(v) -> tuple[int, ...]:
    if isinstance(v, (tuple, list)):
        return tuple(int(x) for x in v)
    return tuple(int(x) for x in str(v).split(",") if x.strip())


# key -> (type, default); keys double as long flag names
MODEL_TRAIN_OPTIONS = {
    "seed": (int, 0),
    "epochs": (int, 30),
    "lr": (float, 0.01),
    "layers": (int, 10),
    "channels": (int, 128),
    "dk": (int, 16),
    "dropout": (float, 0.5),
    "variant": (str, "symmetric_pooled"),
    "no-pooling": (_bool, False),
    "truncate-mismatch": (_bool, False),
    "jobs": (int, 0),
}
COMMAND_OPTIONS = {
    "train": {"manifest": (str, None), "out": (str, "run")},
    "eval": {"manifest": (str, None), "checkpoint": (str, None), "out": (str, "eval"),
             "truth-as-pred": (_bool, False)},
    "predict": {"checkpoint": (str, None), "features": (str, None), "out": (str, "predict")},
    "louo": {"manifest": (str, None), "out": (str, "louo")},
    "ablate": {"manifest": (str, None), "out": (str, "ablate"),
               "variants": (lambda v: tuple(str(v).split(",")) if isinstance(v, str) else tuple(v),
                            ABLATION_VARIANTS),
               "layer-sweep": (_int_list, LAYER_SWEEP)},
    "gradcheck": {"out": (str, None), "step": (float, gradchecks.STEP), "tol": (float, gradchecks.TOL)},
    "synth": {"out": (str, "synth"), "users": (int, 3), "trials-per-user": (int, 8),
              "classes": (int, 4), "mean-segment": (float, 60.0), "noise": (float, 2.5),
              "dim": (int, 16), "frames": (int, 300), "drift": (float, 0.25)},
}
COMMAND_HELP = {
    "train": "train one model on every trial of a manifest",
    "eval": "evaluate a checkpoint on the trials of a manifest",
    "predict": "label the frames of one feature file",
    "louo": "leave-one-user-out cross-validation",
    "ablate": "variant ablation and layer sweep, each run as LOUO",
    "gradcheck": "finite-difference check of every op and a small model",
    "synth": "write a synthetic gesture dataset",
}


class UsageError(ValueError):
    pass


def read_config_file(path) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def options_for(command: str) -> dict:
    opts = dict(COMMAND_OPTIONS[command])
    if command not in ("synth",):
        opts = {**MODEL_TRAIN_OPTIONS, **opts}
    else:
        opts["seed"] = MODEL_TRAIN_OPTIONS["seed"]
    return opts


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags into one flat settings dict."""
    opts = options_for(command)
    from_file = read_config_file(args.config) if args.config else {}
    unknown = set(from_file) - set(opts) - {"command"}
    if unknown:
        raise UsageError(f"unknown config keys for '{command}': {', '.join(sorted(unknown))}")
    settings = {}
    for key, (conv, default) in opts.items():
        flag = getattr(args, key.replace("-", "_"), None)
        if flag is not None:
            value = flag
        elif key in from_file:
            value = from_file[key]
        else:
            value = default
        settings[key] = conv(value) if value is not None else None
    return settings


def dump_settings(command: str, settings: dict) -> str:
    lines = [f"command={command}"]
    for key in sorted(settings):
        v = settings[key]
        if v is None:
            continue
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = str(v).lower()
        lines.append(f"{key}={v}")
    return "\n".join(lines) + "\n"


def model_config(s: dict, num_classes: int, input_dim: int) -> ModelConfig:
    return ModelConfig(num_classes=num_classes, input_dim=input_dim, num_layers=s["layers"],
                       channels=s["channels"], d_k=s["dk"], dropout_rate=s["dropout"],
                       pooling_enabled=not s["no-pooling"], variant=s["variant"])


def train_config(s: dict) -> TrainConfig:
    return TrainConfig(epochs=s["epochs"], learning_rate=s["lr"], seed=s["seed"])


def _require(s: dict, *keys):
    for k in keys:
        if not s.get(k):
            raise UsageError(f"--{k} is required")


def _outdir(s: dict, command: str) -> Path:
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(dump_settings(command, s))
    return out


def _jobs(s: dict):
    return s["jobs"] if s["jobs"] > 0 else None


def _write_log(path: Path, history: list[dict]) -> None:
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in history))


def cmd_train(s: dict) -> int:
    _require(s, "manifest")
    trials, vocab = load_manifest(s["manifest"], truncate=s["truncate-mismatch"])
    out = _outdir(s, "train")
    cfg = model_config(s, len(vocab), trials[0].features.shape[1])
    params, history = train([(t.features, t.labels) for t in trials], cfg, train_config(s),
                            on_epoch=lambda r: log.info("epoch %(epoch)d loss %(loss).6f acc %(acc).2f", r))
    _write_log(out / "train_log.jsonl", history)
    save_checkpoint(out / "checkpoint.bin", params, cfg, vocab.names)
    vocab.save(out / "vocab.txt")
    print(f"trained {len(trials)} trials for {len(history)} epochs; "
          f"final loss={history[-1]['loss']:.6f} acc={history[-1]['acc']:.2f}")
    print(f"wrote {out / 'checkpoint.bin'}")
    return 0


def cmd_eval(s: dict) -> int:
    _require(s, "manifest")
    if not s["truth-as-pred"]:
        _require(s, "checkpoint")
    out = _outdir(s, "eval")
    rows, reports = [], []
    if s["truth-as-pred"]:
        trials, _ = load_manifest(s["manifest"], truncate=s["truncate-mismatch"])
        preds = {t.id: t.labels for t in trials}
    else:
        params, cfg, names, _ = load_checkpoint(s["checkpoint"])
        trials, _ = load_manifest(s["manifest"], vocab=ClassVocab(names),
                                  truncate=s["truncate-mismatch"])
        if trials[0].features.shape[1] != cfg.input_dim:
            raise ShapeError(f"checkpoint expects {cfg.input_dim}-dim features, data has "
                             f"{trials[0].features.shape[1]}")
        preds = {t.id: predict(t.features, params, cfg)[1] for t in trials}
    lines = []
    for t in trials:
        r = evaluate(preds[t.id], t.labels)
        reports.append(r)
        rows.append((t.id, r))
        lines.append(r.serialize(trial=t.id))
    agg = aggregate(reports)
    lines.append(agg.serialize(trial="ALL"))
    (out / "reports.txt").write_text("\n".join(lines) + "\n")
    print(format_table(rows + [("ALL", agg)], title="trial"))
    return 0


def cmd_predict(s: dict) -> int:
    _require(s, "checkpoint", "features")
    params, cfg, names, _ = load_checkpoint(s["checkpoint"])
    feats = read_features(s["features"])
    out = _outdir(s, "predict")
    _, labels = predict(feats, params, cfg)
    tokens = [names[i] if i < len(names) else str(i) for i in labels]
    stem = Path(s["features"]).stem
    (out / f"{stem}.lbl").write_text("".join(f"{tok}\n" for tok in tokens))
    segs = to_segments(labels.tolist())
    (out / f"{stem}.segments").write_text(
        "".join(f"{tokens[seg.start]} {seg.start} {seg.end}\n" for seg in segs))
    print(f"{len(tokens)} frames, {len(segs)} segments -> {out / (stem + '.lbl')}")
    return 0


def _louo_outputs(out: Path, trials, results, agg, vocab) -> list[str]:
    lines = []
    covered = sorted(tid for res in results for tid in res.fold.test)
    partition = covered == sorted(t.id for t in trials)
    for i, res in enumerate(results):
        fold_dir = out / f"fold_{i:02d}_{res.fold.user}"
        fold_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(fold_dir / "checkpoint.bin", res.params, res.config, vocab.names,
                        {"fold": i, "user": res.fold.user, "test": list(res.fold.test)})
        _write_log(fold_dir / "train_log.jsonl", res.history)
        for tid, r in res.reports.items():
            lines.append(r.serialize(fold=i, user=res.fold.user, trial=tid))
        lines.append(res.aggregate.serialize(fold=i, user=res.fold.user, trial="FOLD"))
    lines.append(agg.serialize(fold="ALL", user="ALL", trial="ALL"))
    lines.append(f"folds={len(results)} test_partition={'ok' if partition else 'BROKEN'}")
    if not partition:
        raise DataError("fold test sets do not partition the trials")
    return lines


def cmd_louo(s: dict) -> int:
    _require(s, "manifest")
    trials, vocab = load_manifest(s["manifest"], truncate=s["truncate-mismatch"])
    out = _outdir(s, "louo")
    cfg = model_config(s, len(vocab), trials[0].features.shape[1])
    results, agg = louo(trials, cfg, train_config(s), jobs=_jobs(s))
    lines = _louo_outputs(out, trials, results, agg, vocab)
    baseline = majority_baseline(trials)
    lines.append(f"majority_baseline_acc={baseline:.2f}")
    (out / "reports.txt").write_text("\n".join(lines) + "\n")
    rows = [(f"fold {i} ({r.fold.user})", r.aggregate) for i, r in enumerate(results)]
    print(format_table(rows + [("ALL", agg)], title="LOUO"))
    print(f"majority-class baseline acc {baseline:.2f}")
    return 0


def cmd_ablate(s: dict) -> int:
    _require(s, "manifest")
    trials, vocab = load_manifest(s["manifest"], truncate=s["truncate-mismatch"])
    for v in s["variants"]:
        if v not in VARIANTS:
            raise UsageError(f"unknown variant {v!r}")
    out = _outdir(s, "ablate")
    base = model_config(s, len(vocab), trials[0].features.shape[1])
    lines, table = [], []
    for name, cfg in ablation_rows(base, s["layer-sweep"], s["variants"]):
        log.info("ablation row %s", name)
        _, agg = louo(trials, cfg, train_config(s), jobs=_jobs(s))
        lines.append(agg.serialize(row=name, variant=cfg.variant, layers=cfg.num_layers))
        table.append((name, agg))
    (out / "ablation.txt").write_text("\n".join(lines) + "\n")
    print(format_table(table, title="configuration"))
    return 0


def cmd_gradcheck(s: dict) -> int:
    reports: dict[str, GradcheckReport] = gradchecks.run_all(s["seed"], step=s["step"], tol=s["tol"])
    lines = []
    for name, rep in reports.items():
        lines.extend(rep.lines(name))
    ok = all(r.passed for r in reports.values())
    lines.append(f"gradcheck overall {'PASS' if ok else 'FAIL'}")
    text = "\n".join(lines) + "\n"
    if s["out"]:
        out = _outdir(s, "gradcheck")
        (out / "gradcheck.txt").write_text(text)
    sys.stdout.write(text)
    if not ok:
        print("error: gradient check failed", file=sys.stderr)
        return 1
    return 0


def cmd_synth(s: dict) -> int:
    out = _outdir(s, "synth")
    trials, vocab = synth_dataset(s["users"], s["trials-per-user"], s["classes"], s["mean-segment"],
                                  s["noise"], s["seed"], input_dim=s["dim"], num_frames=s["frames"],
                                  drift=s["drift"])
    manifest = write_dataset(trials, out, vocab)
    print(f"wrote {len(trials)} trials to {manifest}")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "predict": cmd_predict, "louo": cmd_louo,
            "ablate": cmd_ablate, "gradcheck": cmd_gradcheck, "synth": cmd_synth}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="symdil", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=COMMAND_HELP[name])
        p.add_argument("--config", help="flat key=value settings file")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress")
        for key, (conv, default) in options_for(name).items():
            dest = key.replace("-", "_")
            if conv is _bool:
                p.add_argument(f"--{key}", dest=dest, action="store_const", const=True, default=None)
            else:
                p.add_argument(f"--{key}", dest=dest, default=None,
                               help=f"default: {default}" if default is not None else None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = resolve(args.command, args)
        return COMMANDS[args.command](settings)
    except (UsageError, DataError, ShapeError, CheckpointError, TrainingError, ValueError,
            KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
