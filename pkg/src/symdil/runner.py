"""Fold-level experiment orchestration shared by the CLI commands."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Fold, FoldPlan, Trial, build_louo
from .metrics import MetricsReport, aggregate, evaluate
from .model import ModelConfig, predict
from .training import TrainConfig, train

ABLATION_VARIANTS = ("attention_only", "head_dilation", "tail_dilation", "symmetric", "symmetric_pooled")
LAYER_SWEEP = (2, 6, 10, 14)


def fold_seed(run_seed: int, fold_index: int) -> int:
    """Per-fold seed derived deterministically from the run seed."""
    return int(np.random.SeedSequence([run_seed, fold_index]).generate_state(1)[0])


@dataclass
class FoldResult:
    fold: Fold
    config: ModelConfig
    params: dict[str, np.ndarray]
    history: list[dict]
    reports: dict[str, MetricsReport]
    predictions: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def aggregate(self) -> MetricsReport:
        return aggregate(list(self.reports.values()))


def run_fold(trials: Sequence[Trial], fold: Fold, fold_index: int, model_config: ModelConfig,
             train_config: TrainConfig) -> FoldResult:
    by_id = {t.id: t for t in trials}
    tcfg = TrainConfig(**{**train_config.to_dict(), "seed": fold_seed(train_config.seed, fold_index)})
    params, history = train([(by_id[i].features, by_id[i].labels) for i in fold.train],
                            model_config, tcfg)
    reports, preds = {}, {}
    for tid in fold.test:
        tr = by_id[tid]
        _, labels = predict(tr.features, params, model_config)
        preds[tid] = labels
        reports[tid] = evaluate(labels, tr.labels)
    return FoldResult(fold, model_config, params, history, reports, preds)


def _run_fold_args(args):
    return run_fold(*args)


def default_jobs(n_tasks: int) -> int:
    return max(1, min(n_tasks, os.cpu_count() or 1))


def run_folds(trials: Sequence[Trial], plan: FoldPlan, model_config: ModelConfig,
              train_config: TrainConfig, jobs: int | None = None) -> list[FoldResult]:
    """Train and evaluate every fold; folds run in worker processes when ``jobs > 1``.

    Results are returned in fold order regardless of completion order, and
    each fold's seed depends only on the run seed and the fold index.
    """
    tasks = [(trials, fold, i, model_config, train_config) for i, fold in enumerate(plan)]
    jobs = default_jobs(len(tasks)) if jobs is None else max(1, jobs)
    if jobs == 1 or len(tasks) == 1:
        return [run_fold(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
        return list(pool.map(_run_fold_args, tasks))


def louo(trials: Sequence[Trial], model_config: ModelConfig, train_config: TrainConfig,
         jobs: int | None = None) -> tuple[list[FoldResult], MetricsReport]:
    plan = build_louo(trials)
    results = run_folds(trials, plan, model_config, train_config, jobs)
    all_reports = [r for res in results for r in res.reports.values()]
    return results, aggregate(all_reports)


def ablation_rows(model_config: ModelConfig, layers: Sequence[int] = LAYER_SWEEP,
                  variants: Sequence[str] = ABLATION_VARIANTS) -> list[tuple[str, ModelConfig]]:
    """Variant rows at the configured depth followed by full-model layer-sweep rows."""
    rows = [(v, model_config.with_(variant=v)) for v in variants]
    rows += [(f"{n}_layers", model_config.with_(variant="symmetric_pooled", num_layers=n))
             for n in layers]
    return rows


def majority_baseline(trials: Sequence[Trial]) -> float:
    """Frame accuracy of always predicting the most frequent class."""
    labels = np.concatenate([t.labels for t in trials])
    return 100.0 * np.bincount(labels).max() / len(labels)
