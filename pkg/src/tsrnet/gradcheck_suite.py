"""Finite-difference checks for every differentiable primitive and the full model."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autograd import GradCheckReport, Tape, Tensor, grad_check
from .model import TsrNetConfig, build, forward
from .ops import Conv2dParams, conv2d, mse_loss, pixel_shuffle, relu, residual_add
from .scs import ScsParams, scs_conv2d

OP_TOL = 1e-4
MODEL_TOL = 1e-3
# narrow model so every parameter can be perturbed within the time budget
GRADCHECK_MODEL = dict(scale=2, channels=2)
KINK_DRAWS = 50


def _t(a) -> Tensor:
    return Tensor(np.asarray(a, dtype=np.float64))


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.uniform(margin, 1.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def case_conv2d(rng):
    x = _t(rng.standard_normal((1, 2, 5, 5)))
    w = _t(rng.standard_normal((3, 2, 3, 3)))
    b = _t(rng.standard_normal(3))
    y = _t(rng.standard_normal((1, 3, 5, 5)))
    return (lambda x, w, b: mse_loss(conv2d(x, Conv2dParams(w, b, 1)), y)), [x, w, b], OP_TOL


def case_relu(rng):
    x = _t(_away_from_zero(rng, (2, 3, 4, 4)))
    y = _t(rng.standard_normal((2, 3, 4, 4)))
    return (lambda x: mse_loss(relu(x), y)), [x], OP_TOL


def case_residual_add(rng):
    a = _t(rng.standard_normal((1, 2, 4, 4)))
    b = _t(rng.standard_normal((1, 2, 4, 4)))
    y = _t(rng.standard_normal((1, 2, 4, 4)))
    return (lambda a, b: mse_loss(residual_add(a, b), y)), [a, b], OP_TOL


def case_pixel_shuffle(rng):
    x = _t(rng.standard_normal((1, 8, 3, 3)))
    y = _t(rng.standard_normal((1, 2, 6, 6)))
    return (lambda x: mse_loss(pixel_shuffle(x, 2), y)), [x], OP_TOL


def case_mse_loss(rng):
    a = _t(rng.standard_normal((2, 3, 4, 4)))
    b = _t(rng.standard_normal((2, 3, 4, 4)))
    return (lambda a, b: mse_loss(a, b)), [a, b], OP_TOL


def case_scs_conv2d(rng):
    # positive inputs and filters keep every <f, k> strictly positive
    x = _t(rng.uniform(0.1, 1.0, (1, 2, 5, 5)))
    w = _t(rng.uniform(0.1, 1.0, (3, 2, 3, 3)))
    p = _t(rng.uniform(0.5, 2.5, 3))
    eps = _t([rng.uniform(0.01, 0.1)])
    coeff = _t(rng.standard_normal((1, 3, 5, 5)))

    def closure(x, w, p, eps):
        out = scs_conv2d(x, ScsParams(w, p, eps))
        return mse_loss(out, coeff)

    return closure, [x, w, p, eps], OP_TOL


def _min_relu_margin(closure) -> float:
    with Tape() as tape:
        closure()
    pre = [np.abs(n.inputs[0].data).min() for n in tape.nodes if n.op == "relu"]
    return float(min(pre)) if pre else np.inf


def _draw_tsrnet(rng, cfg):
    params = build(cfg, seed=int(rng.integers(0, 2 ** 31)), dtype=np.float64)
    for name, t in params.items():
        if name.endswith(".bias"):
            t.data[...] = 0.2 * _away_from_zero(rng, t.shape, margin=0.25)
    x = _t(rng.uniform(0.0, 1.0, (1, 3, 8, 8)))
    y = _t(rng.uniform(0.0, 1.0, (1, 3, 16, 16)))
    return params, (lambda *_: mse_loss(forward(params, cfg, x), y))


def case_tsrnet(rng):
    cfg = TsrNetConfig(**GRADCHECK_MODEL)
    # keep the draw whose ReLU pre-activations sit farthest from the kink
    draws = [_draw_tsrnet(rng, cfg) for _ in range(KINK_DRAWS)]
    params, closure = max(draws, key=lambda d: _min_relu_margin(d[1]))
    return closure, list(params.tensors.values()), MODEL_TOL


CASES: dict[str, Callable] = {
    "conv2d": case_conv2d,
    "relu": case_relu,
    "residual_add": case_residual_add,
    "pixel_shuffle": case_pixel_shuffle,
    "mse_loss": case_mse_loss,
    "scs_conv2d": case_scs_conv2d,
    "tsrnet": case_tsrnet,
}


@dataclass
class CaseResult:
    name: str
    seed: int
    tolerance: float
    report: GradCheckReport

    @property
    def passed(self) -> bool:
        return self.report.passed


def run_case(name: str, seed: int) -> CaseResult:
    closure, inputs, tol = CASES[name](np.random.default_rng(seed))
    return CaseResult(name, seed, tol, grad_check(closure, inputs, tol))


def run_suite(seeds=range(5), names=None, on_result=None) -> list[CaseResult]:
    results = []
    for name in names or CASES:
        for seed in seeds:
            r = run_case(name, seed)
            results.append(r)
            if on_result:
                on_result(r)
    return results
