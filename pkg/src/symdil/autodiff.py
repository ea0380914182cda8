"""Reverse-mode differentiation over the fixed set of sequence operations.

A :class:`Tape` records every operation as a :class:`Node` in execution
order, so node ids are already topologically sorted.  :func:`backward`
walks the nodes once in reverse and accumulates gradients into every node
that needs one; the gradients of named parameters are returned.

    tape = Tape()
    x = tape.constant(features)
    w = tape.param("w", weights)
    b = tape.param("b", bias)
    h = tape.record("conv1d", [x, w, b], dilation=2)
    loss = tape.record("sum", [tape.record("relu", [h])])
    grads = backward(tape, loss)      # {"w": ..., "b": ...}
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import tensor as tc

LOG_CLAMP = 1e-12


@dataclass
class Node:
    id: int
    op: str
    inputs: tuple[int, ...]
    value: np.ndarray
    ctx: dict[str, Any] = field(default_factory=dict)
    name: str | None = None
    requires_grad: bool = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape


# ---------------------------------------------------------------------------
# forward rules: (input values, context) -> (output value, saved context)


def _fwd_conv1d(vals, ctx):
    x, w, b = vals
    return tc.conv1d(x, w, b, dilation=ctx["dilation"]), {}


def _fwd_linear(vals, ctx):
    if len(vals) == 3:
        return tc.linear(vals[0], vals[1], vals[2]), {}
    return tc.linear(vals[0], vals[1]), {}


def _fwd_relu(vals, ctx):
    return tc.relu(vals[0]), {}


def _fwd_add(vals, ctx):
    return tc.add(vals[0], vals[1]), {}


def _fwd_scale(vals, ctx):
    return tc.scale(vals[0], ctx["factor"]), {}


def _fwd_maxpool(vals, ctx):
    out, argmax = tc.maxpool_time(vals[0], ctx.get("window", tc.POOL_WINDOW))
    return out, {"argmax": argmax}


def _fwd_upsample(vals, ctx):
    return tc.upsample_time(vals[0], ctx["target_T"], ctx.get("factor", tc.POOL_WINDOW)), {}


def _fwd_softmax(vals, ctx):
    return tc.softmax_rows(vals[0]), {}


def _fwd_layernorm(vals, ctx):
    x, gain, bias = vals
    eps = ctx.get("eps", tc.LAYERNORM_EPS)
    out = tc.layernorm(x, gain, bias, eps)
    xhat, inv_std = tc.layernorm_stats(tc.as_seq(x), eps)
    return out, {"xhat": xhat, "inv_std": inv_std}


def _fwd_matmul(vals, ctx):
    return tc.matmul(vals[0], vals[1]), {}


def _fwd_matmul_attn(vals, ctx):
    return tc.matmul_attn(vals[0], vals[1]), {}


def _fwd_dropout(vals, ctx):
    mask = ctx["mask"]
    if mask.shape != vals[0].shape:
        raise tc.ShapeError("dropout mask shape differs from its input")
    return vals[0] * mask, {}


def _fwd_cross_entropy(vals, ctx):
    probs = tc.as_seq(vals[0], "probs")
    labels = np.asarray(ctx["labels"])
    if labels.shape != (probs.shape[0],):
        raise tc.ShapeError(f"{labels.shape[0]} labels for {probs.shape[0]} frames")
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise ValueError(f"labels must lie in [0, {probs.shape[1]})")
    picked = probs[np.arange(probs.shape[0]), labels]
    loss = -np.mean(np.log(np.maximum(picked, LOG_CLAMP)))
    return np.array([[loss]]), {"picked": picked}


def _fwd_sum(vals, ctx):
    return np.array([[vals[0].sum()]]), {}


def _fwd_weighted_sum(vals, ctx):
    w = ctx["weights"]
    if w.shape != vals[0].shape:
        raise tc.ShapeError(f"weighted_sum: weights {w.shape} vs input {vals[0].shape}")
    return np.array([[np.sum(vals[0] * w)]]), {}


# ---------------------------------------------------------------------------
# backward rules: (upstream grad, node, input values) -> grads per input


def _bwd_conv1d(g, node, vals):
    x, w, _ = vals
    d = node.ctx["dilation"]
    T = x.shape[0]
    pad = (w.shape[2] - 1) // 2 * d
    xp = tc.pad_time(x, pad)
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for j in range(w.shape[2]):
        lo = j * d
        if lo + T <= pad or lo >= pad + T:
            continue
        dxp[lo:lo + T] += g @ w[:, :, j]
        dw[:, :, j] = g.T @ xp[lo:lo + T]
    return [dxp[pad:pad + T], dw, g.sum(axis=0)]


def _bwd_linear(g, node, vals):
    x, w = vals[0], vals[1]
    grads = [g @ w.T, x.T @ g]
    if len(vals) == 3:
        grads.append(g.sum(axis=0))
    return grads


def _bwd_relu(g, node, vals):
    return [g * (vals[0] > 0)]


def _bwd_add(g, node, vals):
    return [g, g]


def _bwd_scale(g, node, vals):
    return [g * node.ctx["factor"]]


def _bwd_maxpool(g, node, vals):
    x = vals[0]
    dx = np.zeros_like(x)
    argmax = node.ctx["argmax"]
    cols = np.broadcast_to(np.arange(x.shape[1]), argmax.shape)
    np.add.at(dx, (argmax, cols), g)
    return [dx]


def _bwd_upsample(g, node, vals):
    x = vals[0]
    factor = node.ctx.get("factor", tc.POOL_WINDOW)
    src = np.arange(g.shape[0]) // factor
    dx = np.zeros_like(x)
    np.add.at(dx, src, g)
    return [dx]


def _bwd_softmax(g, node, vals):
    y = node.value
    return [y * (g - (g * y).sum(axis=1, keepdims=True))]


def _bwd_layernorm(g, node, vals):
    _, gain, _ = vals
    xhat, inv_std = node.ctx["xhat"], node.ctx["inv_std"]
    gx = g * gain
    dx = inv_std * (gx - gx.mean(axis=1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=1, keepdims=True))
    return [dx, (g * xhat).sum(axis=0), g.sum(axis=0)]


def _bwd_matmul(g, node, vals):
    a, b = vals
    return [g @ b, g.T @ a]


def _bwd_matmul_attn(g, node, vals):
    attn, v = vals
    return [g @ v.T, attn.T @ g]


def _bwd_dropout(g, node, vals):
    return [g * node.ctx["mask"]]


def _bwd_cross_entropy(g, node, vals):
    probs = vals[0]
    labels = np.asarray(node.ctx["labels"])
    picked = node.ctx["picked"]
    T = probs.shape[0]
    dp = np.zeros_like(probs)
    live = picked > LOG_CLAMP
    rows = np.arange(T)[live]
    dp[rows, labels[live]] = -1.0 / (T * picked[live])
    return [dp * g[0, 0]]


def _bwd_sum(g, node, vals):
    return [np.full_like(vals[0], g[0, 0])]


def _bwd_weighted_sum(g, node, vals):
    return [node.ctx["weights"] * g[0, 0]]


OPS: dict[str, tuple[Callable, Callable]] = {
    "conv1d": (_fwd_conv1d, _bwd_conv1d),
    "linear": (_fwd_linear, _bwd_linear),
    "relu": (_fwd_relu, _bwd_relu),
    "add": (_fwd_add, _bwd_add),
    "scale": (_fwd_scale, _bwd_scale),
    "maxpool_time": (_fwd_maxpool, _bwd_maxpool),
    "upsample_time": (_fwd_upsample, _bwd_upsample),
    "softmax_rows": (_fwd_softmax, _bwd_softmax),
    "layernorm": (_fwd_layernorm, _bwd_layernorm),
    "matmul": (_fwd_matmul, _bwd_matmul),
    "matmul_attn": (_fwd_matmul_attn, _bwd_matmul_attn),
    "dropout": (_fwd_dropout, _bwd_dropout),
    "cross_entropy": (_fwd_cross_entropy, _bwd_cross_entropy),
    "sum": (_fwd_sum, _bwd_sum),
    "weighted_sum": (_fwd_weighted_sum, _bwd_weighted_sum),
}


class Tape:
    """Append-only record of one forward computation."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, int] = {}

    def __len__(self):
        return len(self.nodes)

    def _append(self, op, inputs, value, ctx=None, name=None, requires_grad=False) -> int:
        node = Node(len(self.nodes), op, tuple(inputs), value, ctx or {}, name, requires_grad)
        self.nodes.append(node)
        return node.id

    def constant(self, value) -> int:
        return self._append("constant", (), np.asarray(value, dtype=np.float64))

    def param(self, name: str, value) -> int:
        if name in self.params:
            return self.params[name]
        nid = self._append("param", (), np.asarray(value, dtype=np.float64), name=name,
                           requires_grad=True)
        self.params[name] = nid
        return nid

    def record(self, op: str, inputs, **context) -> int:
        """Evaluate ``op`` on the values of ``inputs`` and append the result."""
        if op not in OPS:
            raise ValueError(f"unknown op kind {op!r}")
        inputs = tuple(int(i) for i in inputs)
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise IndexError(f"input node {i} is not on the tape")
        forward, _ = OPS[op]
        out, saved = forward([self.nodes[i].value for i in inputs], context)
        ctx = {**context, **saved}
        needs = any(self.nodes[i].requires_grad for i in inputs)
        return self._append(op, inputs, out, ctx, requires_grad=needs)

    def value(self, nid: int) -> np.ndarray:
        return self.nodes[nid].value


def backward(tape: Tape, loss: int | None = None, upstream=None) -> dict[str, np.ndarray]:
    """Gradients of the scalar node ``loss`` w.r.t. every parameter on ``tape``.

    Parameters that do not influence the loss receive zero gradients.  An
    empty tape yields an empty dict.  ``upstream`` scales the seed gradient.
    """
    if not tape.nodes:
        return {}
    if loss is None:
        loss = len(tape.nodes) - 1
    root = tape.nodes[loss]
    if root.value.size != 1:
        raise ValueError(f"backward needs a scalar (1x1) loss, got shape {root.shape}")
    grads: dict[int, np.ndarray] = {loss: np.full((1, 1), 1.0 if upstream is None else float(upstream))}
    for node in reversed(tape.nodes[:loss + 1]):
        if node.op in ("param", "constant"):
            continue
        g = grads.pop(node.id, None)
        if g is None or not node.requires_grad:
            continue
        vals = [tape.nodes[i].value for i in node.inputs]
        _, rule = OPS[node.op]
        for i, gi in zip(node.inputs, rule(g, node, vals)):
            if not tape.nodes[i].requires_grad:
                continue
            if i in grads:
                grads[i] = grads[i] + gi
            else:
                grads[i] = np.array(gi, dtype=np.float64)
    return {name: grads.get(nid, np.zeros_like(tape.nodes[nid].value))
            for name, nid in tape.params.items()}


@dataclass
class GradcheckReport:
    max_rel_err: float
    per_param: dict[str, float]
    checked: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def lines(self, label: str = "gradcheck") -> list[str]:
        out = [f"{label} param={name} max_rel_err={err:.3e}" for name, err in self.per_param.items()]
        out.append(f"{label} coords={self.checked} max_rel_err={self.max_rel_err:.3e} "
                   f"tol={self.tol:g} {'PASS' if self.passed else 'FAIL'}")
        return out


def gradcheck(loss_fn: Callable[[dict[str, np.ndarray]], tuple[float, dict[str, np.ndarray]]],
              params: dict[str, np.ndarray], step: float = 1e-5, tol: float = 1e-4,
              num_coords: int = 200, seed: int = 0) -> GradcheckReport:
    """Compare analytic gradients with central finite differences.

    ``loss_fn(params)`` must return ``(loss, grads)``.  Checks every
    coordinate when there are at most ``num_coords`` of them, otherwise a
    seeded random subset of that size.  The relative error of one coordinate
    is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    loss0, analytic = loss_fn(params)
    if not np.isfinite(loss0):
        raise FloatingPointError("loss is not finite at the base point")
    coords = [(name, i) for name, p in params.items() for i in range(p.size)]
    if len(coords) > num_coords:
        rng = np.random.default_rng(seed)
        pick = np.sort(rng.choice(len(coords), size=num_coords, replace=False))
        coords = [coords[i] for i in pick]
    per_param: dict[str, float] = {name: 0.0 for name in params}
    for name, i in coords:
        flat = params[name].reshape(-1)
        orig = flat[i]
        flat[i] = orig + step
        fp, _ = loss_fn(params)
        flat[i] = orig - step
        fm, _ = loss_fn(params)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"loss is not finite around {name}[{i}]")
        num = (fp - fm) / (2 * step)
        ana = analytic[name].reshape(-1)[i]
        err = abs(ana - num) / max(1e-8, abs(ana) + abs(num))
        per_param[name] = max(per_param[name], err)
    worst = max(per_param.values()) if per_param else 0.0
    return GradcheckReport(worst, per_param, len(coords), tol)
