"""Kalman tracking of the channel Gram matrix with rank-one channel extraction.

The energy report is linear in ``H = h h^H``: ``r = zeta * x^T H conj(x) + eta``.
The filter state is ``H`` written as M^2 reals (diagonal entries, then the
real and imaginary parts of each strict-upper-triangle entry, row-major).
Under the AR(1) channel model ``E[H(n) | H(n-1)] = gamma^2 H(n-1) + (1 - gamma^2) I``;
what is left over is treated as zero-mean process noise whose covariance is
estimated once by Monte Carlo over the stationary distribution.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .channel import ChannelDynamics, initial_channel, step_channel
from .numerics import Rng, herm_eig_max

PROCESS_NOISE_SAMPLES = 1_000_000
PROCESS_NOISE_SEED = 20_240_601


def _pairs(m: int):
    return [(i, j) for i in range(m) for j in range(i + 1, m)]


def gram_param(h_mat) -> np.ndarray:
    """Hermitian (…, M, M) -> real (…, M^2) parameter vector."""
    a = np.asarray(h_mat, dtype=np.complex128)
    m = a.shape[-1]
    parts = [a[..., k, k].real[..., None] for k in range(m)]
    for i, j in _pairs(m):
        parts += [a[..., i, j].real[..., None], a[..., i, j].imag[..., None]]
    return np.concatenate(parts, axis=-1)


def gram_reconstruct(a, m: int | None = None) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if m is None:
        m = int(round(np.sqrt(a.shape[-1])))
    if a.shape[-1] != m * m:
        raise ValueError(f"parameter length {a.shape[-1]} is not M^2 for M={m}")
    out = np.zeros(a.shape[:-1] + (m, m), dtype=np.complex128)
    for k in range(m):
        out[..., k, k] = a[..., k]
    pos = m
    for i, j in _pairs(m):
        z = a[..., pos] + 1j * a[..., pos + 1]
        out[..., i, j] = z
        out[..., j, i] = np.conj(z)
        pos += 2
    return out


def gram_observe_vector(x, zeta: float = 1.0) -> np.ndarray:
    """Row ``c`` with ``c . gram_param(H) == zeta * Tr(conj(x) x^T H)`` for Hermitian H."""
    x = np.asarray(x, dtype=np.complex128)
    if not np.all(np.isfinite(x)):
        raise ValueError("probe has non-finite entries")
    m = x.shape[-1]
    parts = [zeta * np.abs(x[..., k:k + 1]) ** 2 for k in range(m)]
    for i, j in _pairs(m):
        w = x[..., i] * np.conj(x[..., j])
        parts += [(2 * zeta * w.real)[..., None], (-2 * zeta * w.imag)[..., None]]
    return np.concatenate(parts, axis=-1)


@lru_cache(maxsize=16)
def _process_noise_cov_cached(m: int, gamma: float, real_channel: bool, n_samples: int, seed: int):
    dyn = ChannelDynamics("linear", gamma, real_channel=real_channel)
    rng = Rng(seed)
    h = initial_channel(rng, m, dyn, size=n_samples)
    h_next = step_channel(h, dyn, rng)
    eye = gram_param(np.eye(m))
    resid = (gram_param(np.einsum("bi,bj->bij", h_next, h_next.conj()))
             - gamma**2 * gram_param(np.einsum("bi,bj->bij", h, h.conj()))
             - (1 - gamma**2) * eye)
    cov = resid.T @ resid / n_samples
    return 0.5 * (cov + cov.T)


def process_noise_cov(m: int, gamma: float, real_channel: bool = False,
                      n_samples: int = PROCESS_NOISE_SAMPLES, seed: int = PROCESS_NOISE_SEED) -> np.ndarray:
    """Stationary covariance of ``H(n) - E[H(n) | H(n-1)]`` by seeded Monte Carlo."""
    return _process_noise_cov_cached(m, float(gamma), bool(real_channel), int(n_samples), int(seed)).copy()


@dataclass
class KalmanState:
    mean: np.ndarray
    cov: np.ndarray
    gamma: float
    zeta: float
    process_noise_cov: np.ndarray
    prev_estimate: np.ndarray | None = None
    clamped: int = 0

    @property
    def m(self) -> int:
        return int(round(np.sqrt(self.mean.shape[-1])))


def initial_state(m: int, gamma: float, zeta: float = 1.0, real_channel: bool = False,
                  cov_scale: float = 1.0, process_noise: np.ndarray | None = None) -> KalmanState:
    """Stationary prior: mean E[H] = I, covariance ``cov_scale * I``."""
    q = process_noise_cov(m, gamma, real_channel) if process_noise is None else process_noise
    return KalmanState(gram_param(np.eye(m)), cov_scale * np.eye(m * m), gamma, zeta, q)


def kalman_predict(st: KalmanState) -> KalmanState:
    g2 = st.gamma**2
    mean = g2 * st.mean + (1 - g2) * gram_param(np.eye(st.m))
    cov = g2 * g2 * st.cov + st.process_noise_cov
    return replace(st, mean=mean, cov=cov)


def kalman_update(st: KalmanState, x, r: float, noise_var: float) -> KalmanState:
    if not noise_var > 0:
        raise ValueError(f"noise_var must be > 0, got {noise_var}")
    c = gram_observe_vector(x, st.zeta)
    pc = st.cov @ c
    s = float(c @ pc) + noise_var
    k = pc / s
    mean = st.mean + k * (r - float(c @ st.mean))
    cov = st.cov - np.outer(k, pc)
    return replace(st, mean=mean, cov=0.5 * (cov + cov.T))


def _align(h_hat: np.ndarray, prev) -> np.ndarray:
    if prev is None:
        return h_hat
    ip = np.vdot(h_hat, prev)
    if abs(ip) == 0.0:
        return h_hat
    return h_hat * (ip / abs(ip))


def extract_channel(st: KalmanState):
    """Rank-one channel estimate ``sqrt(lambda_1) u_1`` from the filter mean.

    The phase is chosen to maximize ``Re(h_hat^H prev_estimate)``; a
    non-positive top eigenvalue gives the zero vector and bumps ``clamped``.
    """
    lam, u = herm_eig_max(gram_reconstruct(st.mean, st.m))
    clamped = st.clamped
    if lam <= 0:
        h_hat = np.zeros(st.m, dtype=np.complex128)
        clamped += 1
    else:
        h_hat = _align(np.sqrt(lam) * u, st.prev_estimate)
    return h_hat, replace(st, prev_estimate=h_hat, clamped=clamped)


def kalman_track_sequence(seq, init: KalmanState, return_states: bool = False):
    """Predict, update, extract at every step. Returns ``(n_steps, M)`` estimates."""
    if seq.m != init.m:
        raise ValueError(f"sequence has M={seq.m}, filter has M={init.m}")
    st = init
    out = np.empty((seq.n_steps, seq.m), dtype=np.complex128)
    states = []
    for n in range(seq.n_steps):
        st = kalman_predict(st)
        st = kalman_update(st, seq.probes[n], seq.feedbacks[n], seq.noise_var)
        out[n], st = extract_channel(st)
        if return_states:
            states.append(st)
    return (out, states) if return_states else out


# -- batched path ------------------------------------------------------------

def _eig_max_2x2_batch(hm: np.ndarray):
    """Vectorized dominant eigenpair for a stack of 2x2 Hermitian matrices.

    Mirrors the closed form in :func:`herm_eig_max`, including the e1 tie-break
    and the canonical phase (largest-magnitude entry real, non-negative).
    """
    p, q, b = hm[:, 0, 0].real, hm[:, 1, 1].real, hm[:, 0, 1]
    half_gap = 0.5 * (p - q)
    lam = 0.5 * (p + q) + np.hypot(half_gap, np.abs(b))
    u = np.empty((len(p), 2), dtype=np.complex128)
    first = half_gap >= 0
    u[first, 0] = lam[first] - q[first]
    u[first, 1] = np.conj(b[first])
    u[~first, 0] = b[~first]
    u[~first, 1] = lam[~first] - p[~first]
    diag = np.abs(b) == 0.0
    u[diag & (p >= q)] = (1.0, 0.0)
    u[diag & (p < q)] = (0.0, 1.0)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    k = np.argmax(np.abs(u), axis=1)
    lead = u[np.arange(len(u)), k]
    u *= (np.abs(lead) / lead)[:, None]
    u[np.arange(len(u)), k] = np.abs(lead)
    return lam, u


def kalman_track_batch(probes, feedbacks, noise_var: float, gamma: float, zeta: float = 1.0,
                       real_channel: bool = False, return_gram: bool = False):
    """Run independent filters over ``B`` sequences at once.

    ``probes`` is ``(B, n, M)``, ``feedbacks`` ``(B, n)``. Every filter starts
    from :func:`initial_state`. Returns complex estimates ``(B, n, M)`` (and the
    filtered Gram parameters ``(B, n, M^2)`` when ``return_gram``).
    """
    if not noise_var > 0:
        raise ValueError(f"noise_var must be > 0, got {noise_var}")
    probes = np.asarray(probes, dtype=np.complex128)
    feedbacks = np.asarray(feedbacks, dtype=np.float64)
    batch, n, m = probes.shape
    st0 = initial_state(m, gamma, zeta, real_channel)
    eye = gram_param(np.eye(m))
    mean = np.tile(st0.mean, (batch, 1))
    cov = np.tile(st0.cov, (batch, 1, 1))
    qn = st0.process_noise_cov
    g2 = gamma**2
    prev = None
    est = np.empty((batch, n, m), dtype=np.complex128)
    grams = np.empty((batch, n, m * m)) if return_gram else None
    for t in range(n):
        mean = g2 * mean + (1 - g2) * eye
        cov = g2 * g2 * cov + qn
        c = gram_observe_vector(probes[:, t], zeta)
        pc = np.einsum("bij,bj->bi", cov, c)
        s = np.einsum("bi,bi->b", c, pc) + noise_var
        k = pc / s[:, None]
        mean = mean + k * (feedbacks[:, t] - np.einsum("bi,bi->b", c, mean))[:, None]
        cov = cov - k[:, :, None] * pc[:, None, :]
        cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
        hm = gram_reconstruct(mean, m)
        if m == 2:
            lam, u = _eig_max_2x2_batch(hm)
        elif m == 1:
            lam, u = hm[:, 0, 0].real.copy(), np.ones((batch, 1), dtype=np.complex128)
        else:
            pairs = [herm_eig_max(hm[b]) for b in range(batch)]
            lam = np.array([pr[0] for pr in pairs])
            u = np.stack([pr[1] for pr in pairs])
        h_hat = np.sqrt(np.maximum(lam, 0.0))[:, None] * u
        if prev is not None:
            ip = np.einsum("bi,bi->b", h_hat.conj(), prev)
            mag = np.abs(ip)
            rot = np.where(mag > 0, ip / np.where(mag > 0, mag, 1.0), 1.0)
            h_hat = h_hat * rot[:, None]
        h_hat[lam <= 0] = 0.0
        est[:, t] = h_hat
        prev = h_hat
        if return_gram:
            grams[:, t] = mean
    return (est, grams) if return_gram else est
