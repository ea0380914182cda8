"""Finite-difference gradient checks for every op and for a small composed model."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .autodiff import GradcheckReport, Tape, backward, gradcheck
from .model import Forward, ModelConfig, init_params

STEP = 1e-5
TOL = 1e-4
SMALL_MODEL = dict(num_layers=2, channels=4, d_k=3, num_classes=3, input_dim=5, dropout_rate=0.0)
SMALL_T = 12


def _probe(build: Callable[[Tape, dict[str, int]], int], seed: int):
    """Loss = random weighted sum of ``build``'s output, so every output cell matters."""
    weights = {}

    def loss_fn(p):
        tape = Tape()
        ids = {k: tape.param(k, v) for k, v in p.items()}
        out = build(tape, ids)
        if "w" not in weights:
            weights["w"] = np.random.default_rng(seed).standard_normal(tape.value(out).shape)
        loss = tape.record("weighted_sum", [out], weights=weights["w"])
        return float(tape.value(loss)[0, 0]), backward(tape, loss)

    return loss_fn


def op_cases(seed: int = 0) -> dict[str, tuple[Callable, dict[str, np.ndarray]]]:
    randn = np.random.default_rng(seed).standard_normal
    cases = {}

    def conv(d):
        return lambda t, i: t.record("conv1d", [i["x"], i["w"], i["b"]], dilation=d)

    cases["conv1d_d1"] = (_probe(conv(1), seed), {"x": randn((16, 3)), "w": randn((2, 3, 3)), "b": randn(2)})
    cases["conv1d_d2"] = (_probe(conv(2), seed), {"x": randn((16, 3)), "w": randn((2, 3, 3)), "b": randn(2)})
    # T > 512 so the outer taps reach real frames
    cases["conv1d_d512"] = (_probe(conv(512), seed),
                            {"x": randn((600, 2)), "w": randn((2, 2, 3)), "b": randn(2)})
    cases["relu"] = (_probe(lambda t, i: t.record("relu", [i["x"]]), seed), {"x": randn((10, 3))})
    cases["maxpool"] = (_probe(lambda t, i: t.record("maxpool_time", [i["x"]], window=4), seed),
                        {"x": randn((13, 3))})
    cases["upsample"] = (_probe(lambda t, i: t.record("upsample_time", [i["x"]], target_T=11), seed),
                         {"x": randn((3, 2))})
    cases["layernorm"] = (_probe(lambda t, i: t.record("layernorm", [i["x"], i["g"], i["b"]]), seed),
                          {"x": randn((6, 5)), "g": randn(5), "b": randn(5)})
    cases["softmax"] = (_probe(lambda t, i: t.record("softmax_rows", [i["x"]]), seed),
                        {"x": randn((6, 4))})
    cases["linear"] = (_probe(lambda t, i: t.record("linear", [i["x"], i["w"], i["b"]]), seed),
                       {"x": randn((7, 3)), "w": randn((3, 4)), "b": randn(4)})

    def ce_build(t, i):
        probs = t.record("softmax_rows", [i["x"]])
        return t.record("cross_entropy", [probs], labels=np.array([0, 2, 1, 1, 0, 2]))
    cases["cross_entropy"] = (_probe(ce_build, seed), {"x": randn((6, 3))})
    cases["attention"] = attention_case(seed)
    return cases


def attention_case(seed: int = 0, T: int = 8, f: int = 4, d_k: int = 3):
    cfg = ModelConfig(num_classes=2, input_dim=f, channels=f, d_k=d_k, dropout_rate=0.0)
    params = {k: v for k, v in init_params(cfg, seed).items() if k.startswith("attn.")}
    params["h"] = np.random.default_rng(seed + 1).standard_normal((T, f))

    def build(tape, ids):
        fwd = Forward(params, cfg, tape=tape)
        return fwd.attention_block(ids["h"])
    return _probe(build, seed), params


def block_case(seed: int = 0, T: int = 16, f: int = 4, dilation: int = 2):
    cfg = ModelConfig(num_classes=2, input_dim=f, channels=f, num_layers=1, dropout_rate=0.0,
                      variant="head_dilation")
    params = {k: v for k, v in init_params(cfg, seed).items() if k.startswith("enc.0.")}
    params["e"] = np.random.default_rng(seed + 1).standard_normal((T, f))

    def build(tape, ids):
        return Forward(params, cfg, tape=tape).dilated_residual_block(ids["e"], "enc.0", dilation)
    return _probe(build, seed), params


def model_case(seed: int = 0, variant: str = "symmetric_pooled", T: int = SMALL_T):
    cfg = ModelConfig(variant=variant, **SMALL_MODEL)
    params = init_params(cfg, seed)
    rng = np.random.default_rng(seed + 1)
    x = rng.standard_normal((T, cfg.input_dim))
    y = rng.integers(0, cfg.num_classes, T)

    def loss_fn(p):
        fwd = Forward(p, cfg)
        loss = fwd.tape.record("cross_entropy", [fwd(x)], labels=y)
        return float(fwd.tape.value(loss)[0, 0]), backward(fwd.tape, loss)
    return loss_fn, params


def run_all(seed: int = 0, step: float = STEP, tol: float = TOL,
            num_coords: int = 200) -> dict[str, GradcheckReport]:
    cases = op_cases(seed)
    cases["residual_block"] = block_case(seed)
    cases["model"] = model_case(seed)
    return {name: gradcheck(fn, params, step=step, tol=tol, num_coords=num_coords, seed=seed)
            for name, (fn, params) in cases.items()}
