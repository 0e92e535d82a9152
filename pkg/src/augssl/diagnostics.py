"""Gradient-check suite over every hand-written backward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .apc import ApcModel, apc_loss

# (tolerance, finite-difference step) per component
TOLERANCES = {
    "linear": (1e-6, 1e-5),
    "mse": (1e-6, 1e-5),
    "cross_entropy": (1e-6, 1e-5),
    "lstm": (1e-3, 1e-4),
    "apc": (1e-3, 1e-4),
}


@dataclass
class SuiteResult:
    name: str
    max_rel_error: float
    tolerance: float
    instances: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def _linear_case(rng):
    params = nn.init_linear(6, 4, rng)
    x = rng.standard_normal((5, 6))
    w_out = rng.standard_normal((5, 4))

    def f(p):
        y = nn.linear_forward(p, x)
        grads, _ = nn.linear_backward(p, x, w_out)
        return float(np.sum(y * w_out)), grads

    return f, params


def _mse_case(rng):
    target = rng.standard_normal((5, 3))
    params = {"pred": rng.standard_normal((5, 3))}

    def f(p):
        loss, g = nn.mse_loss(p["pred"], target)
        return loss, {"pred": g}

    return f, params


def _ce_case(rng):
    labels = rng.integers(0, 4, size=6)
    params = {"logits": 2.0 * rng.standard_normal((6, 4))}

    def f(p):
        loss, g = nn.cross_entropy_from_log_probs(nn.log_softmax(p["logits"]), labels)
        return loss, {"logits": g}

    return f, params


def _lstm_case(rng):
    params = nn.init_lstm(4, 8, 3, rng)
    x = rng.standard_normal((5, 4))
    w_out = rng.standard_normal((5, 8))

    def f(p):
        h, cache = nn.lstm_forward(p, x)
        grads, _ = nn.lstm_backward(p, cache, w_out)
        return float(np.sum(h * w_out)), grads

    return f, params


def _apc_case(rng):
    seed = int(rng.integers(2 ** 31))
    model = ApcModel.initialize(input_size=4, hidden_size=8, num_layers=3, seed=seed)
    x = rng.standard_normal((10, 4))

    def f(p):
        return apc_loss(ApcModel(p), x, 3)

    return f, model.params


CASES = {"linear": _linear_case, "mse": _mse_case, "cross_entropy": _ce_case,
         "lstm": _lstm_case, "apc": _apc_case}


def gradient_suite(instances: int = 20, seed: int = 0, num_coords: int = 6, names=None) -> list:
    """Finite-difference check of each backward pass on ``instances`` random problems."""
    results = []
    for name in names or CASES:
        tol, h = TOLERANCES[name]
        worst = 0.0
        for i in range(instances):
            rng = np.random.default_rng([seed, i, len(name)])
            f, params = CASES[name](rng)
            rep = nn.grad_check(f, params, tol, num_coords=num_coords, h=h, seed=i)
            worst = max(worst, rep.max_rel_error)
        results.append(SuiteResult(name, worst, tol, instances))
    return results
