"""Cross-entropy loss, Adam, and the whole-video training loop."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autodiff import LOG_CLAMP, Tape, backward
from .model import Forward, ModelConfig, init_params

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.98
    eps_adam: float = 1e-9
    seed: int = 0
    shuffle: bool = True
    clip_norm: float | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.eps_adam <= 0:
            raise ValueError("eps_adam must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def cross_entropy_loss(probs, labels) -> float:
    """Mean over frames of ``-log p(true class)``, with the log clamped at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.shape != (probs.shape[0],):
        raise ValueError(f"{labels.shape} labels for {probs.shape[0]} frames")
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise ValueError(f"labels must lie in [0, {probs.shape[1]})")
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(picked, LOG_CLAMP))))


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              config: TrainConfig) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name}")
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        params[name] -= config.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + config.eps_adam)
    return params, state


def loss_and_grads(params, config: ModelConfig, features, labels, training=False, rng=None):
    """Forward + backward on one sequence: ``(loss, grads, probs)``."""
    fwd = Forward(params, config, training=training, rng=rng)
    probs = fwd(features)
    loss = fwd.tape.record("cross_entropy", [probs], labels=np.asarray(labels))
    grads = backward(fwd.tape, loss)
    return float(fwd.tape.value(loss)[0, 0]), grads, fwd.tape.value(probs)


def _clip(grads, max_norm):
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        for g in grads.values():
            g *= max_norm / total


def train(dataset: Sequence[tuple[np.ndarray, np.ndarray]], model_config: ModelConfig,
          train_config: TrainConfig, params: dict[str, np.ndarray] | None = None,
          on_epoch: Callable[[dict], None] | None = None):
    """Train on whole videos, one optimisation step per video.

    Returns ``(params, log)`` where ``log`` holds one record per epoch with
    the mean training loss and the frame accuracy of the training-mode
    predictions.
    """
    if not dataset:
        raise TrainingError("empty dataset")
    for i, (x, y) in enumerate(dataset):
        if x.shape[1] != model_config.input_dim:
            raise TrainingError(f"sequence {i} has {x.shape[1]} channels, expected "
                                f"{model_config.input_dim}")
        if len(y) != x.shape[0]:
            raise TrainingError(f"sequence {i}: {x.shape[0]} frames but {len(y)} labels")
    seeds = np.random.SeedSequence(train_config.seed).spawn(3)
    if params is None:
        params = init_params(model_config, int(seeds[0].generate_state(1)[0]))
    order_rng = np.random.default_rng(seeds[1])
    dropout_rng = np.random.default_rng(seeds[2])
    state = AdamState()
    history = []
    for epoch in range(1, train_config.epochs + 1):
        order = order_rng.permutation(len(dataset)) if train_config.shuffle else range(len(dataset))
        losses, correct, frames = [], 0, 0
        for vid in order:
            x, y = dataset[vid]
            loss, grads, probs = loss_and_grads(params, model_config, x, y, training=True,
                                                rng=dropout_rng)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, video {vid}")
            if train_config.clip_norm is not None:
                _clip(grads, train_config.clip_norm)
            adam_step(params, grads, state, train_config)
            losses.append(loss)
            correct += int(np.sum(np.argmax(probs, axis=1) == np.asarray(y)))
            frames += len(y)
        record = {"epoch": epoch, "loss": float(np.mean(losses)), "acc": 100.0 * correct / frames}
        history.append(record)
        log.debug("epoch %d loss %.6f acc %.2f", epoch, record["loss"], record["acc"])
        if on_epoch is not None:
            on_epoch(record)
    return params, history


def fit_frame_classifier(dataset: Sequence[tuple[np.ndarray, np.ndarray]], num_classes: int,
                         epochs: int = 200, learning_rate: float = 0.05, seed: int = 0):
    """Context-free per-frame softmax regression, trained full-batch with Adam.

    Serves as the frame-independent baseline: it sees one frame at a time
    and so cannot use temporal context.  Returns ``(weights, bias)``.
    """
    x = np.concatenate([f for f, _ in dataset])
    y = np.concatenate([np.asarray(l) for _, l in dataset])
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(x.shape[1])
    params = {"w": rng.uniform(-bound, bound, (x.shape[1], num_classes)),
              "b": np.zeros(num_classes)}
    cfg = TrainConfig(epochs=epochs, learning_rate=learning_rate, seed=seed)
    state = AdamState()
    for _ in range(epochs):
        tape = Tape()
        probs = tape.record("softmax_rows", [tape.record(
            "linear", [tape.constant(x), tape.param("w", params["w"]), tape.param("b", params["b"])])])
        loss = tape.record("cross_entropy", [probs], labels=y)
        adam_step(params, backward(tape, loss), state, cfg)
    return params["w"], params["b"]


def frame_classifier_predict(weights, bias, features) -> np.ndarray:
    return np.argmax(np.asarray(features) @ weights + bias, axis=1)
