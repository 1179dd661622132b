"""Small numpy neural-network engine: LSTM cell, dense layer, optimizers.

Everything works on row batches: inputs are ``(B, d)`` arrays and the same
code path serves ``B = 1``. Parameters live in plain dataclasses of float64
arrays; gradients are returned in the same dataclass types, so a gradient
bundle is shape-for-shape identical to the parameters it differentiates.

Gate order inside stacked LSTM arrays is ``(f, i, o, s)``: forget, input and
output gates, then the state candidate.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

GATES = ("f", "i", "o", "s")

ACTIVATIONS = ("tanh", "relu", "identity", "sigmoid")


def sigmoid(z):
    # split form avoids overflow warnings for large |z|
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def activate(name: str, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return sigmoid(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "identity":
        return z
    raise ValueError(f"unknown activation {name!r}")


def activate_grad(name: str, z, a):
    """Derivative of the activation at pre-activation ``z`` with output ``a``."""
    if name == "tanh":
        return 1.0 - a * a
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "identity":
        return np.ones_like(z)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class LstmCellParams:
    """Stacked gate parameters: W (4, q, d), U (4, q, q), b (4, q)."""

    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    @property
    def q(self) -> int:
        return self.W.shape[1]

    @property
    def d(self) -> int:
        return self.W.shape[2]

    def __post_init__(self):
        q, d = self.W.shape[1], self.W.shape[2]
        if self.W.shape != (4, q, d) or self.U.shape != (4, q, q) or self.b.shape != (4, q):
            raise ValueError(
                f"inconsistent LSTM shapes W{self.W.shape} U{self.U.shape} b{self.b.shape}")

    def gate(self, j: str):
        k = GATES.index(j)
        return self.W[k], self.U[k], self.b[k]

    @classmethod
    def zeros(cls, d: int, q: int) -> "LstmCellParams":
        return cls(np.zeros((4, q, d)), np.zeros((4, q, q)), np.zeros((4, q)))

    @classmethod
    def init(cls, d: int, q: int, gen: np.random.Generator) -> "LstmCellParams":
        if d < 1 or q < 1:
            raise ValueError(f"LSTM sizes must be >= 1, got d={d}, q={q}")
        lim = 1.0 / np.sqrt(d + q)
        return cls(gen.uniform(-lim, lim, (4, q, d)), gen.uniform(-lim, lim, (4, q, q)),
                   gen.uniform(-lim, lim, (4, q)))


@dataclass
class LstmCellState:
    c: np.ndarray
    s: np.ndarray

    @classmethod
    def zeros(cls, q: int, batch: int = 1) -> "LstmCellState":
        return cls(np.zeros((batch, q)), np.zeros((batch, q)))


@dataclass
class DenseParams:
    V: np.ndarray
    beta: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        if self.V.ndim != 2 or self.beta.shape != (self.V.shape[0],):
            raise ValueError(f"inconsistent dense shapes V{self.V.shape} beta{self.beta.shape}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @classmethod
    def init(cls, n_in: int, n_out: int, activation: str, gen: np.random.Generator) -> "DenseParams":
        if n_in < 1 or n_out < 1:
            raise ValueError(f"dense sizes must be >= 1, got {n_in}->{n_out}")
        lim = 1.0 / np.sqrt(n_in)
        return cls(gen.uniform(-lim, lim, (n_out, n_in)), gen.uniform(-lim, lim, n_out), activation)


def as_float(x) -> np.ndarray:
    """float64 array, except that long-double input stays long double (used by
    the extended-precision finite-difference oracle)."""
    x = np.asarray(x)
    return x if x.dtype == np.longdouble else x.astype(np.float64, copy=False)


def _as_batch(x, width: int, what: str):
    x = as_float(x)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != width:
        raise ValueError(f"{what}: expected width {width}, got shape {x.shape}")
    return x


# -- LSTM cell ---------------------------------------------------------------

@dataclass
class LstmCache:
    x: np.ndarray
    c_prev: np.ndarray
    s_prev: np.ndarray
    z: np.ndarray        # (B, 4, q) pre-activations
    g: np.ndarray        # (B, 4, q) gate outputs f, i, o and the candidate
    s: np.ndarray
    tanh_s: np.ndarray
    gate_activation: str
    shape: tuple


def lstm_cell_forward(p: LstmCellParams, x, prev: LstmCellState, gate_activation: str = "tanh"):
    """One LSTM step.

    gates ``g_j = act(W_j x + U_j c_prev + b_j)`` for j in f, i, o;
    ``s = g_f * s_prev + g_i * tanh(W_s x + U_s c_prev + b_s)``;
    ``c = g_o * tanh(s)``.
    """
    q, d = p.q, p.d
    x = _as_batch(x, d, "lstm input")
    c_prev = _as_batch(prev.c, q, "lstm c_prev")
    s_prev = _as_batch(prev.s, q, "lstm s_prev")
    z = x @ p.W.reshape(4 * q, d).T + c_prev @ p.U.reshape(4 * q, q).T + p.b.reshape(4 * q)
    z = z.reshape(-1, 4, q)
    g = np.empty_like(z)
    g[:, :3] = activate(gate_activation, z[:, :3])
    g[:, 3] = np.tanh(z[:, 3])
    s = g[:, 0] * s_prev + g[:, 1] * g[:, 3]
    tanh_s = np.tanh(s)
    c = g[:, 2] * tanh_s
    cache = LstmCache(x, c_prev, s_prev, z, g, s, tanh_s, gate_activation, (q, d))
    return LstmCellState(c, s), cache


def lstm_cell_backward(p: LstmCellParams, cache: LstmCache, d_next: LstmCellState):
    """Backward pass through one LSTM step.

    ``d_next`` carries dL/dc and dL/ds of the step outputs. Returns
    ``(grads, d_input, d_prev)`` with ``grads`` an :class:`LstmCellParams`.
    """
    q, d = p.q, p.d
    if cache.shape != (q, d):
        raise ValueError(f"cache for shape {cache.shape} does not match params {(q, d)}")
    g = cache.g
    dc = as_float(d_next.c).reshape(cache.s.shape)
    ds = as_float(d_next.s).reshape(cache.s.shape) + dc * g[:, 2] * (1.0 - cache.tanh_s**2)
    dg = np.empty_like(g)
    dg[:, 0] = ds * cache.s_prev
    dg[:, 1] = ds * g[:, 3]
    dg[:, 2] = dc * cache.tanh_s
    dg[:, 3] = ds * g[:, 1]
    dz = np.empty_like(g)
    dz[:, :3] = dg[:, :3] * activate_grad(cache.gate_activation, cache.z[:, :3], g[:, :3])
    dz[:, 3] = dg[:, 3] * (1.0 - g[:, 3] ** 2)
    dz = dz.reshape(-1, 4 * q)
    grads = LstmCellParams(
        (dz.T @ cache.x).reshape(4, q, d),
        (dz.T @ cache.c_prev).reshape(4, q, q),
        dz.sum(axis=0).reshape(4, q),
    )
    d_x = dz @ p.W.reshape(4 * q, d)
    d_c_prev = dz @ p.U.reshape(4 * q, q)
    d_s_prev = ds * g[:, 0]
    return grads, d_x, LstmCellState(d_c_prev, d_s_prev)


# -- dense layer -------------------------------------------------------------

@dataclass
class DenseCache:
    x: np.ndarray
    z: np.ndarray
    a: np.ndarray
    shape: tuple


def dense_forward(p: DenseParams, x):
    x = _as_batch(x, p.V.shape[1], "dense input")
    z = x @ p.V.T + p.beta
    a = activate(p.activation, z)
    return a, DenseCache(x, z, a, p.V.shape)


def dense_backward(p: DenseParams, cache: DenseCache, d_out):
    if cache.shape != p.V.shape:
        raise ValueError("dense cache does not match params")
    d_out = as_float(d_out).reshape(cache.a.shape)
    dz = d_out * activate_grad(p.activation, cache.z, cache.a)
    grads = DenseParams(dz.T @ cache.x, dz.sum(axis=0), p.activation)
    return grads, dz @ p.V


# -- parameter trees and optimizers -----------------------------------------
#
# Optimizers act on flat ``dict[str, ndarray]`` trees. Containers above map to
# trees through ``tree_of`` / ``zeros_like_tree``.

def tree_of(obj, prefix: str = "") -> dict:
    """Flatten a params dataclass (or a list/dict of them) into name -> array."""
    out = {}
    if isinstance(obj, np.ndarray):
        out[prefix] = obj
    elif isinstance(obj, dict):
        for k, v in obj.items():
            out.update(tree_of(v, f"{prefix}{k}."))
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            out.update(tree_of(v, f"{prefix}{i}."))
    elif hasattr(obj, "__dataclass_fields__"):
        for f in fields(obj):
            v = getattr(obj, f.name)
            if isinstance(v, np.ndarray):
                out[prefix + f.name] = v
    else:
        raise TypeError(f"cannot flatten {type(obj).__name__}")
    return {k.rstrip("."): v for k, v in out.items()}


def _check_same_shapes(params: dict, grads: dict):
    if params.keys() != grads.keys():
        raise ValueError(f"gradient keys differ from parameter keys: {sorted(set(params) ^ set(grads))}")
    for k, v in params.items():
        if np.shape(grads[k]) != np.shape(v):
            raise ValueError(f"shape mismatch for {k}: {np.shape(v)} vs {np.shape(grads[k])}")


def sgd_step(params: dict, grads: dict, alpha: float) -> dict:
    """Plain gradient descent: theta <- theta - alpha * grad."""
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    _check_same_shapes(params, grads)
    return {k: v - alpha * grads[k] for k, v in params.items()}


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def fresh(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(v) for k, v in params.items()},
                   {k: np.zeros_like(v) for k, v in params.items()})


def adam_step(params: dict, grads: dict, state: AdamState | None, alpha: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    _check_same_shapes(params, grads)
    if state is None:
        state = AdamState.fresh(params)
    t = state.t + 1
    new_m, new_v, new_p = {}, {}, {}
    for k in sorted(params):
        g = grads[k]
        new_m[k] = beta1 * state.m[k] + (1 - beta1) * g
        new_v[k] = beta2 * state.v[k] + (1 - beta2) * g * g
        m_hat = new_m[k] / (1 - beta1**t)
        v_hat = new_v[k] / (1 - beta2**t)
        new_p[k] = params[k] - alpha * m_hat / (np.sqrt(v_hat) + eps)
    return new_p, AdamState(new_m, new_v, t)


def grad_check(loss_fn, params: dict, epsilon: float = 1e-6, grads: dict | None = None,
               fd_dtype=np.longdouble) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(params)`` returns ``(loss, grads)`` or just the loss; in the
    latter case the analytic ``grads`` must be supplied. Each entry's relative
    error uses the denominator ``max(|analytic|, |numeric|, 1e-8)``.

    Perturbed losses are evaluated with parameters cast to ``fd_dtype`` (long
    double by default): in float64 the round-off of a central difference at
    epsilon=1e-6 is ~1e-10 for an O(1) loss, too coarse for the 1e-8 floor.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")

    def scalar(out):
        return out[0] if isinstance(out, tuple) else out

    first = loss_fn(params)
    if not np.isfinite(scalar(first)):
        raise FloatingPointError("loss is not finite at the check point")
    analytic = grads if grads is not None else first[1]
    _check_same_shapes(params, analytic)
    hi = {k: np.asarray(v).astype(fd_dtype) for k, v in params.items()}
    eps = fd_dtype(epsilon)
    worst = 0.0
    for k in sorted(params):
        base = hi[k]
        for idx in np.ndindex(base.shape):
            orig = base[idx]
            probe = {**hi, k: base.copy()}
            probe[k][idx] = orig + eps
            lp = scalar(loss_fn(probe))
            probe[k][idx] = orig - eps
            lm = scalar(loss_fn(probe))
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise FloatingPointError(f"loss is not finite when perturbing {k}{idx}")
            num = float((lp - lm) / (2 * eps))
            ana = float(analytic[k][idx])
            worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-8))
    return worst
