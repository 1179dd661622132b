"""Time-varying channel trajectories, probe signals and harvested-energy feedback.

The default dynamics are the first-order Gauss-Markov process
``h(n) = gamma * h(n-1) + u(n)`` with unit stationary power per antenna. A
``nonlinear`` variant adds an elementwise ``tanh`` drift term; it is an
example dynamics for robustness experiments and is not part of the linear
model the Kalman baseline assumes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .numerics import PRNG_ID, Rng, sample_complex_gaussian, sample_rademacher_vec


@dataclass(frozen=True)
class ChannelDynamics:
    kind: str = "linear"
    gamma: float = 0.998
    nonlinear_strength: float = 0.0
    real_channel: bool = False

    def __post_init__(self):
        if self.kind not in ("linear", "nonlinear"):
            raise ValueError(f"unknown dynamics kind {self.kind!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.nonlinear_strength < 0:
            raise ValueError("nonlinear_strength must be >= 0")

    @property
    def innovation_var(self) -> float:
        return 1.0 - self.gamma**2


@dataclass
class ChannelSequence:
    """A realized trajectory with the probes and feedback that observed it.

    Arrays are stacked along the first axis: ``channels`` and ``probes`` are
    ``(n_steps, M)`` complex, ``feedbacks`` is ``(n_steps,)`` real.
    """

    channels: np.ndarray
    probes: np.ndarray
    feedbacks: np.ndarray
    zeta: float
    noise_var: float
    gamma: float = float("nan")
    seed: int | None = None
    prng: str = PRNG_ID
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.channels)
        if len(self.probes) != n or len(self.feedbacks) != n:
            raise ValueError("channels, probes and feedbacks must have equal length")

    @property
    def m(self) -> int:
        return self.channels.shape[1]

    @property
    def n_steps(self) -> int:
        return self.channels.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ChannelSequence):
            return NotImplemented
        return (
            np.array_equal(self.channels, other.channels)
            and np.array_equal(self.probes, other.probes)
            and np.array_equal(self.feedbacks, other.feedbacks)
            and self.zeta == other.zeta
            and self.noise_var == other.noise_var
        )


def _innovation(rng: Rng, var: float, shape, real: bool):
    if real:
        return np.sqrt(var) * rng.gen.standard_normal(shape) + 0j
    return sample_complex_gaussian(rng, var, size=shape)


def _drift(h: np.ndarray, dyn: ChannelDynamics) -> np.ndarray:
    out = dyn.gamma * h
    if dyn.kind == "nonlinear":
        out = out + dyn.nonlinear_strength * (np.tanh(h.real) + 1j * np.tanh(h.imag))
    return out


def step_channel(h_prev, dyn: ChannelDynamics, rng: Rng, u=None) -> np.ndarray:
    """One transition of the channel process.

    ``u`` overrides the sampled innovation (used to pin the frozen-channel case).
    Works on a single ``(M,)`` vector or a ``(B, M)`` batch.
    """
    h_prev = np.asarray(h_prev, dtype=np.complex128)
    if not np.all(np.isfinite(h_prev)):
        raise ValueError("h_prev has non-finite entries")
    if u is None:
        u = _innovation(rng, dyn.innovation_var, h_prev.shape, dyn.real_channel)
    return _drift(h_prev, dyn) + u


def harvested_energy(x, h, zeta: float = 1.0):
    """zeta * |x^T h|^2, over the last axis (so batches broadcast)."""
    x = np.asarray(x, dtype=np.complex128)
    h = np.asarray(h, dtype=np.complex128)
    if x.shape[-1] != h.shape[-1]:
        raise ValueError(f"dimension mismatch: x has {x.shape[-1]} entries, h has {h.shape[-1]}")
    if not 0.0 < zeta <= 1.0:
        raise ValueError(f"zeta must lie in (0, 1], got {zeta}")
    e = zeta * np.abs(np.sum(x * h, axis=-1)) ** 2
    return float(e) if e.ndim == 0 else e


def feedback(x, h, zeta: float, noise_var: float, rng: Rng):
    """Harvested energy plus real Gaussian report noise. Can be negative."""
    if noise_var < 0:
        raise ValueError(f"noise_var must be >= 0, got {noise_var}")
    q = harvested_energy(x, h, zeta)
    shape = np.shape(q)
    eta = np.sqrt(noise_var) * rng.gen.standard_normal(shape)
    r = q + eta
    return float(r) if np.ndim(r) == 0 else r


def snr_to_noise_var(snr_db: float) -> float:
    return 10.0 ** (-snr_db / 10.0)


def initial_channel(rng: Rng, m: int, dyn: ChannelDynamics, size=None) -> np.ndarray:
    shape = (m,) if size is None else (size, m)
    return _innovation(rng, 1.0, shape, dyn.real_channel)


def generate_batch(n_seq: int, n_steps: int, m: int, dyn: ChannelDynamics, zeta: float,
                   snr_db: float, rng: Rng):
    """Simulate ``n_seq`` independent sequences at once.

    Returns ``(channels, probes, feedbacks)`` shaped ``(n_seq, n_steps, M)``,
    ``(n_seq, n_steps, M)`` and ``(n_seq, n_steps)``. Draw order per step is
    fixed (innovation, probe, noise) so results depend only on the seed.
    """
    if n_steps < 1 or m < 1 or n_seq < 1:
        raise ValueError("n_seq, n_steps and m must all be >= 1")
    noise_var = snr_to_noise_var(snr_db)
    channels = np.empty((n_seq, n_steps, m), dtype=np.complex128)
    probes = np.empty((n_seq, n_steps, m), dtype=np.complex128)
    feedbacks = np.empty((n_seq, n_steps))
    h = initial_channel(rng, m, dyn, size=n_seq)
    for n in range(n_steps):
        if n > 0:
            h = step_channel(h, dyn, rng)
        x = sample_rademacher_vec(rng, m, size=n_seq)
        channels[:, n] = h
        probes[:, n] = x
        feedbacks[:, n] = feedback(x, h, zeta, noise_var, rng)
    return channels, probes, feedbacks


def generate_sequence(n_steps: int, m: int, dyn: ChannelDynamics, zeta: float, snr_db: float,
                      rng: Rng) -> ChannelSequence:
    """One trajectory started from the stationary distribution."""
    ch, pr, fb = generate_batch(1, n_steps, m, dyn, zeta, snr_db, rng)
    return ChannelSequence(ch[0], pr[0], fb[0], zeta=zeta, noise_var=snr_to_noise_var(snr_db),
                           gamma=dyn.gamma, seed=rng.seed)


# -- CSV serialization -------------------------------------------------------

_HEADER_KEYS = ("M", "n_steps", "gamma", "zeta", "noise_var", "seed", "prng")


def save_sequence_csv(seq: ChannelSequence, path) -> None:
    """Column-oriented CSV: ``# key=value`` header lines, then one row per step.

    Floats are written with ``repr`` so they round-trip exactly.
    """
    m = seq.m
    cols = [f"h{k}_re" for k in range(m)] + [f"h{k}_im" for k in range(m)]
    cols += [f"x{k}_re" for k in range(m)] + [f"x{k}_im" for k in range(m)] + ["r"]
    header = dict(M=m, n_steps=seq.n_steps, gamma=repr(float(seq.gamma)), zeta=repr(float(seq.zeta)),
                  noise_var=repr(float(seq.noise_var)), seed="" if seq.seed is None else seq.seed,
                  prng=seq.prng)
    with open(path, "w", newline="", encoding="utf-8") as f:
        for k in _HEADER_KEYS:
            f.write(f"# {k}={header[k]}\n")
        w = csv.writer(f)
        w.writerow(cols)
        for n in range(seq.n_steps):
            h, x = seq.channels[n], seq.probes[n]
            row = [*h.real, *h.imag, *x.real, *x.imag, seq.feedbacks[n]]
            w.writerow([repr(float(v)) for v in row])


def load_sequence_csv(path) -> ChannelSequence:
    header = {}
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    body_start = 0
    for i, line in enumerate(lines):
        if not line.startswith("#"):
            body_start = i
            break
        k, _, v = line[1:].strip().partition("=")
        header[k] = v
    missing = [k for k in _HEADER_KEYS if k not in header]
    if missing:
        raise ValueError(f"sequence file {path} lacks header keys {missing}")
    m, n_steps = int(header["M"]), int(header["n_steps"])
    rows = list(csv.reader(lines[body_start + 1:]))
    if len(rows) != n_steps:
        raise ValueError(f"expected {n_steps} rows, found {len(rows)}")
    data = np.array([[float(v) for v in row] for row in rows]).reshape(n_steps, 4 * m + 1)
    channels = data[:, :m] + 1j * data[:, m:2 * m]
    probes = data[:, 2 * m:3 * m] + 1j * data[:, 3 * m:4 * m]
    return ChannelSequence(channels, probes, data[:, -1].copy(), zeta=float(header["zeta"]),
                           noise_var=float(header["noise_var"]), gamma=float(header["gamma"]),
                           seed=int(header["seed"]) if header["seed"] else None, prng=header["prng"])


__all__ = [
    "ChannelDynamics", "ChannelSequence", "step_channel", "harvested_energy", "feedback",
    "snr_to_noise_var", "generate_sequence", "generate_batch", "initial_channel",
    "save_sequence_csv", "load_sequence_csv",
]
