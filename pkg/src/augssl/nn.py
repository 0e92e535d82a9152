"""Minimal numerical core: LSTM stack and linear layers with hand-written
backward passes, losses, Adam and finite-difference gradient checking.

Parameters are plain ``dict[str, np.ndarray]`` so the optimizer, the
checkpoint writer and the gradient checker can treat every model alike.
LSTM gate order inside the stacked weight matrices is (input, forget,
cell candidate, output).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {name}")


# --------------------------------------------------------------------------
# parameter initialisation


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    k = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-k, k, size=shape)


def init_linear(in_dim: int, out_dim: int, rng: np.random.Generator) -> dict:
    return {"weight": uniform_init(rng, (out_dim, in_dim), in_dim),
            "bias": uniform_init(rng, (out_dim,), in_dim)}


def init_lstm(input_size: int, hidden_size: int, num_layers: int, rng: np.random.Generator) -> dict:
    params = {}
    for layer in range(num_layers):
        in_dim = input_size if layer == 0 else hidden_size
        params[f"{layer}.w_ih"] = uniform_init(rng, (4 * hidden_size, in_dim), hidden_size)
        params[f"{layer}.w_hh"] = uniform_init(rng, (4 * hidden_size, hidden_size), hidden_size)
        params[f"{layer}.bias"] = uniform_init(rng, (4 * hidden_size,), hidden_size)
    return params


def lstm_num_layers(params: dict) -> int:
    return sum(1 for k in params if k.endswith(".w_ih"))


def lstm_dims(params: dict) -> tuple:
    """(input_size, hidden_size, num_layers)."""
    w = params["0.w_ih"]
    return w.shape[1], w.shape[0] // 4, lstm_num_layers(params)


def prefixed(params: dict, prefix: str) -> dict:
    return {f"{prefix}.{k}": v for k, v in params.items()}


def unprefixed(params: dict, prefix: str) -> dict:
    p = prefix + "."
    return {k[len(p):]: v for k, v in params.items() if k.startswith(p)}


# --------------------------------------------------------------------------
# linear


def linear_forward(params: dict, x: np.ndarray) -> np.ndarray:
    w = params["weight"]
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"linear layer expects width {w.shape[1]}, got {x.shape[-1]}")
    return x @ w.T + params["bias"]


def linear_backward(params: dict, x: np.ndarray, grad_out: np.ndarray):
    """Return (grads, grad_x) for y = x W^T + b over any leading axes."""
    w = params["weight"]
    if grad_out.shape[:-1] != x.shape[:-1] or grad_out.shape[-1] != w.shape[0]:
        raise ValueError("linear_backward: grad_out shape does not match forward output")
    x2 = x.reshape(-1, x.shape[-1])
    g2 = grad_out.reshape(-1, grad_out.shape[-1])
    grads = {"weight": g2.T @ x2, "bias": g2.sum(axis=0)}
    return grads, grad_out @ w


# --------------------------------------------------------------------------
# LSTM stack
#
# layer l (0-based) sees x_l; x_0 is the input sequence, x_1 = h_0 and for
# l >= 1, x_{l+1} = h_l + x_l (residual). The stack output is h_{L-1}.


@dataclass
class LstmCache:
    inputs: np.ndarray
    batched: bool
    layers: list = field(default_factory=list)


def _layer_forward(w_ih, w_hh, bias, x, h0, c0):
    batch, steps, _ = x.shape
    hidden = w_hh.shape[1]
    xw = x @ w_ih.T + bias
    gates = np.empty((batch, steps, 4 * hidden))
    cells = np.empty((batch, steps, hidden))
    tanh_c = np.empty((batch, steps, hidden))
    hs = np.empty((batch, steps, hidden))
    h, c = h0, c0
    w_hh_t = w_hh.T
    for t in range(steps):
        a = xw[:, t] + h @ w_hh_t
        i = sigmoid(a[:, :hidden])
        f = sigmoid(a[:, hidden:2 * hidden])
        g = np.tanh(a[:, 2 * hidden:3 * hidden])
        o = sigmoid(a[:, 3 * hidden:])
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        gates[:, t, :hidden] = i
        gates[:, t, hidden:2 * hidden] = f
        gates[:, t, 2 * hidden:3 * hidden] = g
        gates[:, t, 3 * hidden:] = o
        cells[:, t] = c
        tanh_c[:, t] = tc
        hs[:, t] = h
    cache = {"x": x, "h0": h0, "c0": c0, "gates": gates, "cells": cells, "tanh_c": tanh_c, "h": hs}
    return hs, (h, c), cache


def _layer_backward(w_ih, w_hh, cache, grad_h, grad_hT=None, grad_cT=None):
    x, gates, cells, tanh_c, hs = cache["x"], cache["gates"], cache["cells"], cache["tanh_c"], cache["h"]
    batch, steps, hidden = hs.shape
    d_gates = np.empty_like(gates)
    dh_next = np.zeros((batch, hidden)) if grad_hT is None else grad_hT.copy()
    dc_next = np.zeros((batch, hidden)) if grad_cT is None else grad_cT.copy()
    for t in range(steps - 1, -1, -1):
        i = gates[:, t, :hidden]
        f = gates[:, t, hidden:2 * hidden]
        g = gates[:, t, 2 * hidden:3 * hidden]
        o = gates[:, t, 3 * hidden:]
        c_prev = cells[:, t - 1] if t > 0 else cache["c0"]
        dh = grad_h[:, t] + dh_next
        tc = tanh_c[:, t]
        dc = dh * o * (1.0 - tc * tc) + dc_next
        da = d_gates[:, t]
        da[:, :hidden] = dc * g * i * (1.0 - i)
        da[:, hidden:2 * hidden] = dc * c_prev * f * (1.0 - f)
        da[:, 2 * hidden:3 * hidden] = dc * i * (1.0 - g * g)
        da[:, 3 * hidden:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = da @ w_hh
    h_prev = np.concatenate([cache["h0"][:, None, :], hs[:, :-1]], axis=1)
    flat_da = d_gates.reshape(-1, 4 * hidden)
    grads = {
        "w_ih": flat_da.T @ x.reshape(-1, x.shape[-1]),
        "w_hh": flat_da.T @ h_prev.reshape(-1, hidden),
        "bias": flat_da.sum(axis=0),
    }
    grad_x = d_gates @ w_ih
    return grads, grad_x, dh_next, dc_next


def lstm_forward(params: dict, inputs: np.ndarray, state: Optional[list] = None):
    """Run the LSTM stack over ``inputs`` of shape (T, D) or (B, T, D).

    ``state`` is an optional per-layer list of (h, c) pairs to start from
    (zeros otherwise). Returns ``(hidden, cache)``; the cache carries the
    final per-layer state in ``cache.final_state`` so a sequence can be
    continued by passing it back in.
    """
    input_size, hidden_size, num_layers = lstm_dims(params)
    x = np.asarray(inputs, dtype=np.float64)
    batched = x.ndim == 3
    if not batched:
        x = x[None]
    if x.ndim != 3 or x.shape[-1] != input_size:
        raise ValueError(f"lstm_forward expects (..., T, {input_size}) inputs, got {np.shape(inputs)}")
    if x.shape[1] < 1:
        raise ValueError("lstm_forward needs at least one time step")
    batch = x.shape[0]
    cache = LstmCache(inputs=x, batched=batched)
    final_state = []
    layer_in = x
    for layer in range(num_layers):
        if state is None:
            h0 = np.zeros((batch, hidden_size))
            c0 = np.zeros((batch, hidden_size))
        else:
            h0, c0 = (np.broadcast_to(s, (batch, hidden_size)).copy() for s in state[layer])
        hs, last, lcache = _layer_forward(params[f"{layer}.w_ih"], params[f"{layer}.w_hh"],
                                          params[f"{layer}.bias"], layer_in, h0, c0)
        cache.layers.append(lcache)
        final_state.append(last)
        if layer == 0 or layer == num_layers - 1:
            layer_in = hs
        else:
            layer_in = hs + layer_in
    cache.final_state = final_state
    out = hs if batched else hs[0]
    return out, cache


def lstm_backward(params: dict, cache: LstmCache, grad_hidden: np.ndarray):
    """Backpropagation through time for :func:`lstm_forward`.

    Returns ``(grads, grad_inputs)`` with ``grads`` keyed like ``params``.
    """
    num_layers = lstm_num_layers(params)
    g = np.asarray(grad_hidden, dtype=np.float64)
    if not cache.batched:
        g = g[None]
    last_h = cache.layers[-1]["h"]
    if g.shape != last_h.shape:
        raise ValueError(f"grad_hidden shape {g.shape} does not match forward output {last_h.shape}")
    grads = {}
    grad_next_in = None  # gradient w.r.t. x_{l+1}
    for layer in range(num_layers - 1, -1, -1):
        grad_h = g if layer == num_layers - 1 else grad_next_in
        lg, grad_x, _, _ = _layer_backward(params[f"{layer}.w_ih"], params[f"{layer}.w_hh"],
                                           cache.layers[layer], grad_h)
        if 1 <= layer < num_layers - 1:
            # x_{l+1} = h_l + x_l, so x_l also receives x_{l+1}'s gradient
            grad_x = grad_x + grad_next_in
        for k, v in lg.items():
            grads[f"{layer}.{k}"] = v
        grad_next_in = grad_x
    grad_inputs = grad_next_in if cache.batched else grad_next_in[0]
    return grads, grad_inputs


# --------------------------------------------------------------------------
# losses


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean of squared differences over all elements, and its gradient."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    n = diff.size
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


def log_softmax(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    shifted = x - np.max(x, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def cross_entropy_from_log_probs(log_probs: np.ndarray, labels):
    """Mean negative log-likelihood over frames.

    The returned gradient is with respect to the logits that produced
    ``log_probs`` via :func:`log_softmax`: ``(softmax - onehot) / T``.
    """
    log_probs = np.asarray(log_probs, dtype=np.float64)
    labels = np.asarray(getattr(labels, "labels", labels), dtype=np.int64)
    if log_probs.ndim != 2 or labels.shape != (log_probs.shape[0],):
        raise ValueError(f"need (T, K) log-probs and T labels, got {log_probs.shape} and {labels.shape}")
    num_classes = log_probs.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"label out of range [0, {num_classes})")
    t = len(labels)
    rows = np.arange(t)
    loss = float(-np.sum(log_probs[rows, labels]) / t)
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    return loss, grad / t


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """In-place bias-corrected Adam update of ``params``; increments ``state.t``."""
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name}")
        _check_finite(f"gradient {name}", g)
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        params[name] -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def clip_grad_norm(grads: dict, max_norm: float) -> float:
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if total > max_norm > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


# --------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    num_checked: int
    tolerance: float
    worst: Optional[tuple] = None  # (param name, flat index, analytic, numeric)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def relative_error(a, b, floor: float = 1e-10) -> float:
    return float(abs(a - b) / max(abs(a) + abs(b), floor))


def grad_check(loss_and_grad: Callable, params: dict, tolerance: float = 1e-6, *,
               num_coords: int = 40, h: float = 1e-5, seed: int = 0,
               floor: float = 1e-10) -> GradCheckReport:
    """Compare analytic gradients with central finite differences.

    ``loss_and_grad(params)`` returns ``(loss, grads)``. A random subset of
    coordinates (up to ``num_coords`` per parameter) is perturbed in place
    and restored. The error measure is |a - n| / (|a| + |n|).
    """
    _, analytic = loss_and_grad(params)
    analytic = {k: np.array(v, dtype=np.float64, copy=True) for k, v in analytic.items()}
    rng = np.random.default_rng(seed)
    worst, worst_err, count = None, 0.0, 0
    for name in sorted(params):
        p = params[name]
        flat = p.reshape(-1)
        k = min(num_coords, flat.size)
        for idx in rng.choice(flat.size, size=k, replace=False):
            orig = flat[idx]
            flat[idx] = orig + h
            up, _ = loss_and_grad(params)
            flat[idx] = orig - h
            down, _ = loss_and_grad(params)
            flat[idx] = orig
            numeric = (up - down) / (2 * h)
            a = float(analytic[name].reshape(-1)[idx])
            err = relative_error(a, numeric, floor)
            count += 1
            if err > worst_err or worst is None:
                worst_err, worst = err, (name, int(idx), a, numeric)
    return GradCheckReport(worst_err, count, tolerance, worst)
