"""Forward definitions of every sequence operation used by the network.

A sequence tensor is a plain 2-D ``float64`` numpy array of shape ``(T, C)``
(time x channels).  All functions here are pure: they never modify their
inputs and return freshly allocated arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

POOL_WINDOW = 4
LAYERNORM_EPS = 1e-5


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_seq(x, name: str = "x") -> np.ndarray:
    """Validate and coerce ``x`` to a ``(T, C)`` float64 array with T, C >= 1."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name}: expected a 2-D (T, C) array, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name}: empty sequence tensor {arr.shape}")
    return arr


@dataclass(frozen=True)
class ConvSpec:
    kernel_size: int
    dilation: int
    in_channels: int
    out_channels: int
    mode: str = "acausal"

    def __post_init__(self):
        if self.mode != "acausal":
            raise ValueError(f"unsupported convolution mode {self.mode!r}")
        for field in ("kernel_size", "dilation", "in_channels", "out_channels"):
            if getattr(self, field) < 1:
                raise ValueError(f"{field} must be positive")
        if self.kernel_size % 2 != 1:
            raise ValueError("acausal convolution needs an odd kernel size")

    @property
    def padding(self) -> int:
        return (self.kernel_size - 1) // 2 * self.dilation

    @property
    def weight_shape(self) -> tuple[int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel_size)


def _check_conv(x: np.ndarray, weights: np.ndarray, bias: np.ndarray, dilation: int) -> int:
    if weights.ndim != 3:
        raise ShapeError(f"conv weights must be (Cout, Cin, k), got {weights.shape}")
    cout, cin, k = weights.shape
    if x.shape[1] != cin:
        raise ShapeError(f"conv input has {x.shape[1]} channels, weights expect {cin}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv bias must have shape ({cout},), got {bias.shape}")
    if k % 2 != 1:
        raise ShapeError(f"kernel size must be odd in acausal mode, got {k}")
    if dilation < 1:
        raise ValueError("dilation must be positive")
    return (k - 1) // 2 * dilation


def pad_time(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    out = np.zeros((x.shape[0] + 2 * pad, x.shape[1]))
    out[pad:pad + x.shape[0]] = x
    return out


def conv1d(x, weights, bias, dilation: int = 1, spec: ConvSpec | None = None) -> np.ndarray:
    """Acausal dilated 1-D convolution with symmetric zero padding.

    ``out[t, o] = bias[o] + sum_{c, j} weights[o, c, j] * xpad[t + j * dilation, c]``
    where ``xpad`` carries ``(k - 1) / 2 * dilation`` zero frames on each side,
    so the output has the same length as the input.
    """
    x = as_seq(x)
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if spec is not None:
        if weights.shape != spec.weight_shape:
            raise ShapeError(f"weights {weights.shape} do not match {spec.weight_shape}")
        dilation = spec.dilation
    pad = _check_conv(x, weights, bias, dilation)
    T = x.shape[0]
    xp = pad_time(x, pad)
    out = np.broadcast_to(bias, (T, bias.shape[0])).copy()
    for j in range(weights.shape[2]):
        lo = j * dilation
        # taps that fall entirely in the padding contribute nothing
        if lo + T <= pad or lo >= pad + T:
            continue
        out += xp[lo:lo + T] @ weights[:, :, j].T
    return out


def relu(x) -> np.ndarray:
    return np.maximum(as_seq(x), 0.0)


def add(x, y) -> np.ndarray:
    x, y = as_seq(x), as_seq(y, "y")
    if x.shape != y.shape:
        raise ShapeError(f"add: shapes {x.shape} and {y.shape} differ")
    return x + y


def scale(x, a: float) -> np.ndarray:
    return as_seq(x) * float(a)


def linear(x, weights, bias=None) -> np.ndarray:
    """Per-frame affine map ``x @ weights + bias`` with weights of shape (Cin, Cout)."""
    x = as_seq(x)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 2 or weights.shape[0] != x.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weights {weights.shape}")
    out = x @ weights
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        if bias.shape != (weights.shape[1],):
            raise ShapeError(f"linear: bias {bias.shape} does not match {weights.shape[1]} outputs")
        out = out + bias
    return out


def pooled_length(T: int, window: int = POOL_WINDOW) -> int:
    return -(-T // window)


def maxpool_time(x, window: int = POOL_WINDOW) -> tuple[np.ndarray, np.ndarray]:
    """Non-overlapping temporal max-pooling.

    A trailing partial window is completed by repeating the last frame.
    Returns the pooled tensor and, for every output cell, the index of the
    input frame that produced it (earliest frame wins ties).
    """
    x = as_seq(x)
    T, C = x.shape
    n = pooled_length(T, window)
    idx = np.minimum(np.arange(n * window), T - 1).reshape(n, window)
    windows = x[idx]  # (n, window, C)
    local = np.argmax(windows, axis=1)  # first maximum on ties
    argmax = np.take_along_axis(idx[:, :, None].repeat(C, axis=2), local[:, None, :], axis=1)[:, 0, :]
    out = np.take_along_axis(x, argmax, axis=0)
    return out, argmax


def upsample_time(x, target_T: int, factor: int = POOL_WINDOW) -> np.ndarray:
    """Nearest-neighbour repetition of every frame ``factor`` times, cut to ``target_T``."""
    x = as_seq(x)
    if target_T < 1:
        raise ShapeError("target_T must be positive")
    if target_T > factor * x.shape[0]:
        raise ShapeError(f"cannot upsample {x.shape[0]} frames by {factor} to {target_T}")
    return np.repeat(x, factor, axis=0)[:target_T].copy()


def softmax_rows(x) -> np.ndarray:
    x = as_seq(x)
    z = np.exp(x - x.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def layernorm_stats(x: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(x.var(axis=1, keepdims=True) + eps)
    return (x - mean) * inv_std, inv_std


def layernorm(x, gain, bias, eps: float = LAYERNORM_EPS) -> np.ndarray:
    """Per-frame normalisation over channels followed by a channelwise affine map."""
    x = as_seq(x)
    gain = np.asarray(gain, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise ShapeError(f"layernorm: gain/bias must have shape ({x.shape[1]},)")
    xhat, _ = layernorm_stats(x, eps)
    return xhat * gain + bias


def matmul(a, b_transposed) -> np.ndarray:
    """``a @ b_transposed.T``: pairwise frame dot products (e.g. Q K^T)."""
    a, b = as_seq(a, "a"), as_seq(b_transposed, "b")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"matmul: inner dimensions {a.shape[1]} and {b.shape[1]} differ")
    return a @ b.T


def matmul_attn(attn, v) -> np.ndarray:
    attn, v = as_seq(attn, "attn"), as_seq(v, "v")
    if attn.shape[1] != v.shape[0]:
        raise ShapeError(f"matmul_attn: attention {attn.shape} incompatible with values {v.shape}")
    return attn @ v
