"""Complex helpers, dominant Hermitian eigenpairs and seeded sampling.

Complex vectors are plain ``numpy`` arrays of dtype ``complex128``; Hermitian
matrices are ``(M, M)`` complex arrays. Every random draw goes through
:class:`Rng`, which pins the bit generator so sample streams are reproducible
from ``(seed, call order)`` alone.
"""

from __future__ import annotations

import numpy as np

PRNG_ID = "numpy.PCG64"

HERMITIAN_TOL = 1e-12


class Rng:
    """Seeded random source backed by numpy's PCG64 bit generator."""

    algorithm = PRNG_ID

    def __init__(self, seed: int):
        if seed < 0 or seed >= 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.gen = np.random.Generator(np.random.PCG64(self.seed))

    def spawn(self, *keys: int) -> "Rng":
        """Independent child stream keyed by ``(seed, *keys)``; deterministic."""
        ss = np.random.SeedSequence([self.seed, *keys])
        child = Rng.__new__(Rng)
        child.seed = self.seed
        child.gen = np.random.Generator(np.random.PCG64(ss))
        return child

    def __repr__(self):
        return f"Rng(seed={self.seed}, algorithm={self.algorithm!r})"


def as_cvec(x, m: int | None = None) -> np.ndarray:
    v = np.asarray(x, dtype=np.complex128)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"expected a non-empty 1-D complex vector, got shape {v.shape}")
    if m is not None and v.size != m:
        raise ValueError(f"expected length {m}, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite entries")
    return v


def check_hermitian(h, tol: float = HERMITIAN_TOL) -> np.ndarray:
    a = np.asarray(h, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    if np.max(np.abs(a - a.conj().T), initial=0.0) > tol:
        raise ValueError("matrix is not Hermitian within tolerance")
    return a


def sample_complex_gaussian(rng: Rng, variance: float, size=None):
    """Circularly-symmetric complex Gaussian: real and imaginary parts each N(0, variance/2)."""
    if variance < 0:
        raise ValueError(f"variance must be >= 0, got {variance}")
    std = np.sqrt(variance / 2.0)
    if size is None:
        re_, im_ = rng.gen.standard_normal(2)
        return complex(std * re_, std * im_)
    parts = rng.gen.standard_normal((2, *np.atleast_1d(size)))
    return std * (parts[0] + 1j * parts[1])


def sample_rademacher_vec(rng: Rng, m: int, size=None) -> np.ndarray:
    """Vector(s) of i.i.d. +/-1 entries (stored as complex with zero imaginary part)."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    shape = (m,) if size is None else tuple(np.atleast_1d(size)) + (m,)
    bits = rng.gen.integers(0, 2, size=shape)
    return (2.0 * bits - 1.0).astype(np.complex128)


def canonical_phase(u: np.ndarray) -> np.ndarray:
    """Rotate ``u`` so its largest-magnitude entry (first on ties) is real and >= 0."""
    k = int(np.argmax(np.abs(u)))
    a = u[k]
    if abs(a) == 0.0:
        return u
    out = u * (abs(a) / a)
    out[k] = abs(out[k])   # exactly real, not just to rounding
    return out


def _eig_max_2x2(a: np.ndarray):
    p, q = a[0, 0].real, a[1, 1].real
    b = a[0, 1]
    half_gap = 0.5 * (p - q)
    rad = np.hypot(half_gap, abs(b))
    lam = 0.5 * (p + q) + rad
    if abs(b) == 0.0:
        # diagonal: p >= q picks e1, which is also the tie-break for p == q
        u = np.array([1.0, 0.0], dtype=complex) if p >= q else np.array([0.0, 1.0], dtype=complex)
        return lam, u
    # two algebraically equivalent eigenvector forms; use the better-conditioned one
    if half_gap >= 0:
        u = np.array([lam - q, b.conjugate()], dtype=complex)
    else:
        u = np.array([b, lam - p], dtype=complex)
    u /= np.linalg.norm(u)
    return lam, u


def _eig_max_power(a: np.ndarray, tol: float = 1e-12, max_iter: int = 10_000):
    m = a.shape[0]
    # Gershgorin-style shift makes every eigenvalue of b non-negative, so the
    # algebraically largest eigenvalue of a is the dominant one of b
    shift = np.max(np.sum(np.abs(a), axis=1))
    b = a + shift * np.eye(m)
    v = np.zeros(m, dtype=complex)
    v[int(np.argmax(np.diag(a).real))] = 1.0
    v += 1e-3 * np.arange(1, m + 1)
    v /= np.linalg.norm(v)
    lam = np.real(np.vdot(v, a @ v))
    for _ in range(max_iter):
        w = b @ v
        v = w / np.linalg.norm(w)
        lam = np.real(np.vdot(v, a @ v))
        if np.linalg.norm(a @ v - lam * v) <= tol * max(1.0, abs(lam)):
            break
    return lam, v


def _tie_break(a: np.ndarray, lam: float, u: np.ndarray, scale: float):
    """Within a multi-dimensional dominant eigenspace, prefer the smallest-index basis vector."""
    m = a.shape[0]
    for k in range(m):
        e = np.zeros(m, dtype=complex)
        e[k] = 1.0
        if np.linalg.norm(a @ e - lam * e) <= 1e-9 * scale:
            return e
    return u


def herm_eig_max(h) -> tuple[float, np.ndarray]:
    """Largest eigenvalue and unit eigenvector of a Hermitian matrix.

    The eigenvector is phase-canonicalized (largest-magnitude entry real and
    non-negative). Closed form for 2x2, shifted power iteration otherwise.
    """
    a = check_hermitian(h)
    a = 0.5 * (a + a.conj().T)
    m = a.shape[0]
    if m == 1:
        return float(a[0, 0].real), np.array([1.0 + 0j])
    if m == 2:
        lam, u = _eig_max_2x2(a)
    else:
        lam, u = _eig_max_power(a)
    scale = max(1.0, abs(lam))
    u = _tie_break(a, lam, u, scale)
    return float(lam), canonical_phase(u)
