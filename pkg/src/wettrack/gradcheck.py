"""Finite-difference gradient suites for the nn layers and the full tracker."""

from __future__ import annotations

import numpy as np

from . import nn
from .channel import ChannelDynamics
from .numerics import Rng
from .tracker import TrackerArch, build_tracker, teacher_forced_windows

SMALL_ARCH = dict(m=2, t_window=2, k_depth=2, l_hidden=2, q_hidden=6)


def check_lstm_cell(seed: int, gate_activation: str = "tanh", d: int = 3, q: int = 4,
                    epsilon: float = 1e-6) -> float:
    """Cell parameters, input and previous state all checked against
    a random linear functional of the outputs (c, s)."""
    gen = np.random.default_rng(seed)
    p = nn.LstmCellParams.init(d, q, gen)
    x = gen.standard_normal((1, d))
    prev = nn.LstmCellState(gen.uniform(-1, 1, (1, q)), gen.standard_normal((1, q)))
    wc, ws = gen.standard_normal((1, q)), gen.standard_normal((1, q))

    def unpack(tree):
        return (nn.LstmCellParams(tree["W"], tree["U"], tree["b"]), tree["x"],
                nn.LstmCellState(tree["c"], tree["s"]))

    def loss(tree):
        cp, xx, st = unpack(tree)
        out, _ = nn.lstm_cell_forward(cp, xx, st, gate_activation)
        return np.sum(wc * out.c) + np.sum(ws * out.s)

    tree = {"W": p.W, "U": p.U, "b": p.b, "x": x, "c": prev.c, "s": prev.s}
    _, cache = nn.lstm_cell_forward(p, x, prev, gate_activation)
    g, dx, dprev = nn.lstm_cell_backward(p, cache, nn.LstmCellState(wc, ws))
    grads = {"W": g.W, "U": g.U, "b": g.b, "x": dx, "c": dprev.c, "s": dprev.s}
    return nn.grad_check(loss, tree, epsilon, grads=grads)


def check_dense(seed: int, activation: str = "relu", n_in: int = 5, n_out: int = 4,
                epsilon: float = 1e-6) -> float:
    gen = np.random.default_rng(seed)
    p = nn.DenseParams.init(n_in, n_out, activation, gen)
    x = gen.standard_normal((2, n_in))
    w = gen.standard_normal((2, n_out))

    def loss(tree):
        out, _ = nn.dense_forward(nn.DenseParams(tree["V"], tree["beta"], activation), tree["x"])
        return np.sum(w * out)

    _, cache = nn.dense_forward(p, x)
    g, dx = nn.dense_backward(p, cache, w)
    return nn.grad_check(loss, {"V": p.V, "beta": p.beta, "x": x}, epsilon,
                         grads={"V": g.V, "beta": g.beta, "x": dx})


def check_tracker(seed: int, gate_activation: str = "tanh", untied: bool = False,
                  epsilon: float = 1e-6, batch: int = 1, **arch_overrides) -> float:
    """End-to-end check of the window MSE w.r.t. every tracker parameter.

    The window is real simulated data (30 dB, gamma = 0.998) so the loss has
    its natural O(M) scale.
    """
    arch = TrackerArch(**{**SMALL_ARCH, **arch_overrides}, gate_activation=gate_activation,
                       untied=untied)
    rng = Rng(seed)
    tr = build_tracker(arch, rng.spawn(0))
    est, fb, tgt = teacher_forced_windows(arch, batch, ChannelDynamics(), 1.0, 30.0, 0.01, rng.spawn(1))
    inputs = tr.window_inputs(est, fb)
    params = {k: v.copy() for k, v in tr.params().items()}
    _, grads = tr.loss_and_grads(inputs, tgt)

    def loss(tree):
        tr.set_params(tree)
        return tr.loss(inputs, tgt)

    try:
        return nn.grad_check(loss, params, epsilon, grads=grads)
    finally:
        tr.set_params(params)


def run_suite(n_trackers: int = 100, seed: int = 0, epsilon: float = 1e-6) -> dict:
    """Max relative errors per component; tracker draws alternate gate modes."""
    out = {}
    for ga in ("tanh", "sigmoid"):
        out[f"lstm_cell[{ga}]"] = max(check_lstm_cell(seed + i, ga, epsilon=epsilon) for i in range(10))
    for act in nn.ACTIVATIONS:
        out[f"dense[{act}]"] = max(check_dense(seed + i, act, epsilon=epsilon) for i in range(10))
    worst = {"tanh": 0.0, "sigmoid": 0.0}
    for i in range(n_trackers):
        ga = ("tanh", "sigmoid")[i % 2]
        worst[ga] = max(worst[ga], check_tracker(seed + i, ga, epsilon=epsilon))
    for ga, v in worst.items():
        out[f"tracker[{ga}]"] = v
    out["tracker[untied]"] = check_tracker(seed, "tanh", untied=True, epsilon=epsilon)
    return out
