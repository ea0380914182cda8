"""Symmetric dilated encoder, self-attention kernel and decoder.

Parameters live in a flat ``dict`` mapping dotted names to float64 arrays::

    input_proj.w  (f, D, 1)     input_proj.b  (f,)
    enc.{l}.w1    (f, f, 3)     enc.{l}.b1    (f,)      dilated conv
    enc.{l}.w2    (f, f, 1)     enc.{l}.b2    (f,)      1x1 conv
    attn.wq (f, d_k)  attn.wk (f, d_k)  attn.wv (f, f)
    attn.ln1.gain / attn.ln1.bias (f,)
    attn.ffn1.w, attn.ffn2.w (f, f, 1) with biases (f,)
    attn.ln2.gain / attn.ln2.bias (f,)
    dec.{l}.*     mirrors enc.{l}.*
    head.w  (f, C)              head.b  (C,)

Only the tensors used by the configured variant are created.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import tensor as tc
from .autodiff import Tape

VARIANTS = ("attention_only", "head_dilation", "tail_dilation", "symmetric", "symmetric_pooled")


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int
    input_dim: int = 128
    num_layers: int = 10
    channels: int = 128
    kernel_size: int = 3
    d_k: int = 16
    dropout_rate: float = 0.5
    pooling_enabled: bool = True
    variant: str = "symmetric_pooled"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        for name in ("num_classes", "input_dim", "num_layers", "channels", "d_k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.kernel_size != 3:
            raise ValueError("only kernel_size=3 is supported")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @property
    def has_encoder(self) -> bool:
        return self.variant in ("head_dilation", "symmetric", "symmetric_pooled")

    @property
    def has_decoder(self) -> bool:
        return self.variant in ("tail_dilation", "symmetric", "symmetric_pooled")

    @property
    def pools(self) -> bool:
        return self.variant == "symmetric_pooled" and self.pooling_enabled

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def with_(self, **changes) -> "ModelConfig":
        return replace(self, **changes)


def build_variant(config: ModelConfig) -> tuple[str, ...]:
    """The ordered stage list executed by :func:`forward` for ``config``."""
    L = config.num_layers
    stages = ["input_proj"]
    if config.has_encoder:
        stages += [f"enc.{l}" for l in range(L)]
        if config.pools:
            stages.append("maxpool")
    stages.append("attention")
    if config.has_decoder:
        if config.pools:
            stages.append("upsample")
        stages += [f"dec.{l}" for l in range(L)]
    stages.append("head")
    return tuple(stages)


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    f, D, C, k = config.channels, config.input_dim, config.num_classes, config.kernel_size
    p: dict[str, np.ndarray] = {}

    def conv(name, cout, cin, kk):
        p[f"{name}.w"] = _uniform(rng, (cout, cin, kk), cin * kk)
        p[f"{name}.b"] = _uniform(rng, (cout,), cin * kk)

    def block(prefix):
        p[f"{prefix}.w1"] = _uniform(rng, (f, f, k), f * k)
        p[f"{prefix}.b1"] = _uniform(rng, (f,), f * k)
        p[f"{prefix}.w2"] = _uniform(rng, (f, f, 1), f)
        p[f"{prefix}.b2"] = _uniform(rng, (f,), f)

    conv("input_proj", f, D, 1)
    if config.has_encoder:
        for l in range(config.num_layers):
            block(f"enc.{l}")
    p["attn.wq"] = _uniform(rng, (f, config.d_k), f)
    p["attn.wk"] = _uniform(rng, (f, config.d_k), f)
    p["attn.wv"] = _uniform(rng, (f, f), f)
    p["attn.ln1.gain"], p["attn.ln1.bias"] = np.ones(f), np.zeros(f)
    conv("attn.ffn1", f, f, 1)
    conv("attn.ffn2", f, f, 1)
    p["attn.ln2.gain"], p["attn.ln2.bias"] = np.ones(f), np.zeros(f)
    if config.has_decoder:
        for l in range(config.num_layers):
            block(f"dec.{l}")
    p["head.w"] = _uniform(rng, (f, C), f)
    p["head.b"] = _uniform(rng, (C,), f)
    return p


class Forward:
    """Builds the network computation for one sequence on a tape.

    ``training`` enables dropout, which then draws its masks from ``rng``.
    ``bypass_attention`` replaces the attention block by the identity
    (used to probe the convolutional receptive field).
    """

    def __init__(self, params: dict[str, np.ndarray], config: ModelConfig, tape: Tape | None = None,
                 training: bool = False, rng: np.random.Generator | None = None,
                 bypass_attention: bool = False):
        self.params = params
        self.config = config
        self.tape = tape if tape is not None else Tape()
        self.training = training and config.dropout_rate > 0
        if self.training and rng is None:
            raise ValueError("training mode needs a random generator for dropout")
        self.rng = rng
        self.bypass_attention = bypass_attention
        self.attention_nodes: list[int] = []

    def p(self, name: str) -> int:
        try:
            return self.tape.param(name, self.params[name])
        except KeyError:
            raise KeyError(f"missing parameter {name!r} for variant {self.config.variant}") from None

    def dropout(self, h: int) -> int:
        if not self.training:
            return h
        rate = self.config.dropout_rate
        shape = self.tape.value(h).shape
        mask = (self.rng.random(shape) >= rate) / (1.0 - rate)
        return self.tape.record("dropout", [h], mask=mask)

    def conv(self, x: int, name: str, dilation: int = 1) -> int:
        return self.tape.record("conv1d", [x, self.p(f"{name}.w"), self.p(f"{name}.b")],
                                dilation=dilation)

    def dilated_residual_block(self, e_prev: int, prefix: str, dilation: int) -> int:
        t = self.tape
        hidden = t.record("conv1d", [e_prev, self.p(f"{prefix}.w1"), self.p(f"{prefix}.b1")],
                          dilation=dilation)
        hidden = t.record("relu", [hidden])
        out = t.record("conv1d", [hidden, self.p(f"{prefix}.w2"), self.p(f"{prefix}.b2")],
                       dilation=1)
        return t.record("add", [e_prev, self.dropout(out)])

    def dilation_stack(self, h: int, side: str) -> int:
        for l in range(self.config.num_layers):
            h = self.dilated_residual_block(h, f"{side}.{l}", 2 ** l)
        return h

    def encode(self, x: int) -> tuple[int, int]:
        """Input projection, encoder dilation stack and optional pooling."""
        T = self.tape.value(x).shape[0]
        if T < 1:
            raise tc.ShapeError("cannot encode an empty sequence")
        h = self.conv(x, "input_proj")
        if self.config.has_encoder:
            h = self.dilation_stack(h, "enc")
            if self.config.pools:
                h = self.tape.record("maxpool_time", [h], window=tc.POOL_WINDOW)
        return h, T

    def attention_block(self, h: int) -> int:
        if self.bypass_attention:
            return h
        t = self.tape
        q = t.record("linear", [h, self.p("attn.wq")])
        k = t.record("linear", [h, self.p("attn.wk")])
        v = t.record("linear", [h, self.p("attn.wv")])
        logits = t.record("scale", [t.record("matmul", [q, k])],
                          factor=1.0 / math.sqrt(self.config.d_k))
        attn = t.record("softmax_rows", [logits])
        self.attention_nodes.append(attn)
        z = t.record("matmul_attn", [attn, v])
        u = t.record("layernorm", [t.record("add", [h, z]), self.p("attn.ln1.gain"),
                                   self.p("attn.ln1.bias")])
        ff = self.conv(t.record("relu", [self.conv(u, "attn.ffn1")]), "attn.ffn2")
        return t.record("layernorm", [t.record("add", [u, ff]), self.p("attn.ln2.gain"),
                                      self.p("attn.ln2.bias")])

    def decode(self, h: int, original_T: int) -> int:
        if self.config.pools:
            if original_T > tc.POOL_WINDOW * self.tape.value(h).shape[0]:
                raise tc.ShapeError(f"cannot upsample {self.tape.value(h).shape[0]} frames "
                                    f"to {original_T}")
            h = self.tape.record("upsample_time", [h], target_T=original_T, factor=tc.POOL_WINDOW)
        if self.config.has_decoder:
            h = self.dilation_stack(h, "dec")
        return h

    def head(self, h: int) -> int:
        t = self.tape
        logits = t.record("linear", [h, self.p("head.w"), self.p("head.b")])
        return t.record("softmax_rows", [logits])

    def __call__(self, x) -> int:
        """Record the whole network on ``x`` and return the probabilities node."""
        x = tc.as_seq(x, "features")
        if x.shape[1] != self.config.input_dim:
            raise tc.ShapeError(f"features have {x.shape[1]} channels, model expects "
                                f"{self.config.input_dim}")
        h, T = self.encode(self.tape.constant(x))
        h = self.attention_block(h)
        h = self.decode(h, T)
        return self.head(h)


def predict(x, params: dict[str, np.ndarray], config: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Evaluation-mode class probabilities and per-frame argmax labels."""
    fwd = Forward(params, config)
    probs = fwd.tape.value(fwd(x))
    return probs, np.argmax(probs, axis=1)


def count_blocks(params: dict[str, np.ndarray]) -> tuple[int, int]:
    """(dilated residual blocks, attention blocks) present in ``params``."""
    blocks = sum(1 for name in params if name.endswith(".w1"))
    return blocks, int("attn.wq" in params)
