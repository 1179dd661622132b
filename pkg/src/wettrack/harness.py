"""Experiment configuration, MSE/energy sweeps, trajectories and the
train-SNR study, plus CSV and SVG emitters."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelDynamics, generate_batch, snr_to_noise_var
from .kalman import kalman_track_batch
from .numerics import PRNG_ID, Rng
from .tracker import (LstmFnnTracker, TrackerArch, TrainConfig, build_tracker, load_checkpoint,
                      save_checkpoint, train)

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "snr_db", "mse_proposed", "mse_conventional", "mse_conventional_phase_aligned",
    "energy_proposed", "energy_conventional", "energy_perfect_csi",
)
STUDY_COLUMNS = ("test_snr_db", "train_snr_db", "mse_proposed")


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


@dataclass
class ExperimentConfig:
    m: int = 2
    gamma: float = 0.998
    zeta: float = 1.0
    dynamics: str = "linear"
    nonlinear_strength: float = 0.0
    real_channel: bool = False
    snr_grid_db: list = field(default_factory=lambda: [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0])
    train_snr_db: float = 30.0
    study_snrs_db: list = field(default_factory=lambda: [10.0, 20.0, 30.0])
    # architecture
    t_window: int = 2
    k_depth: int = 3
    l_hidden: int = 2
    q_hidden: int = 20
    gate_activation: str = "tanh"
    untied: bool = False
    # training
    n_samples: int = 10_000
    minibatch: int = 1_000
    epochs: int = 100
    alpha: float = 2e-3
    optimizer: str = "adam"
    train_mode: str = "teacher_forced"
    perturb_var: float = 1e-4
    closed_loop_epochs: int = 10
    closed_loop_seq_len: int = 100
    # evaluation
    n_test_samples: int = 1_996_000   # 2000 sequences x (1000 - T) usable steps
    test_seq_len: int = 1_000
    trajectory_steps: int = 1_000
    literal_beamformer: bool = False
    seed: int = 0
    output_dir: str = "out"
    checkpoint: str = ""

    def __post_init__(self):
        if not self.snr_grid_db:
            raise ConfigError("snr_grid_db must not be empty")
        if self.n_test_samples < 1:
            raise ConfigError("n_test_samples must be >= 1")
        if self.test_seq_len <= self.t_window:
            raise ConfigError("test_seq_len must exceed the warm-up window t_window")
        self.snr_grid_db = [float(s) for s in self.snr_grid_db]
        self.study_snrs_db = [float(s) for s in self.study_snrs_db]
        try:
            self.dynamics_obj()
            self.arch()
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def dynamics_obj(self) -> ChannelDynamics:
        return ChannelDynamics(self.dynamics, self.gamma, self.nonlinear_strength, self.real_channel)

    def arch(self) -> TrackerArch:
        return TrackerArch(m=self.m, t_window=self.t_window, k_depth=self.k_depth,
                           l_hidden=self.l_hidden, q_hidden=self.q_hidden,
                           gate_activation=self.gate_activation, untied=self.untied)

    def train_config(self, train_snr_db: float | None = None) -> TrainConfig:
        return TrainConfig(n_samples=self.n_samples, minibatch=self.minibatch, epochs=self.epochs,
                           alpha=self.alpha, optimizer=self.optimizer, mode=self.train_mode,
                           train_snr_db=self.train_snr_db if train_snr_db is None else train_snr_db,
                           seed=self.seed, perturb_var=self.perturb_var,
                           closed_loop_epochs=self.closed_loop_epochs,
                           closed_loop_seq_len=self.closed_loop_seq_len)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _coerce(key: str, value):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    default = _FIELDS[key].default
    if default is dataclasses.MISSING:
        default = _FIELDS[key].default_factory()
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                return value.lower() in ("true", "1", "yes")
            return bool(value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(float(value)) if isinstance(value, str) else int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, list):
            if isinstance(value, str):
                value = [v for v in value.strip("[]").split(",") if v.strip()]
            return [float(v) for v in value]
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key}: {value!r}") from None


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Flat TOML file (``key = value``) plus string/typed overrides."""
    values = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        import tomli
        try:
            with open(path, "rb") as f:
                raw = tomli.load(f)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"malformed config file {path}: {exc}") from None
        for k, v in raw.items():
            if isinstance(v, dict):
                raise ConfigError(f"config must be flat; section [{k}] is not allowed")
            values[k] = _coerce(k, v)
    for k, v in (overrides or {}).items():
        values[k] = _coerce(k, v)
    return ExperimentConfig(**values)


# -- tracker provisioning ----------------------------------------------------

def obtain_tracker(cfg: ExperimentConfig, train_snr_db: float | None = None,
                   save_to: str | None = None) -> LstmFnnTracker:
    """Load ``cfg.checkpoint`` if one is named, otherwise train inline."""
    if cfg.checkpoint and train_snr_db is None:
        if not os.path.exists(cfg.checkpoint):
            raise FileNotFoundError(f"checkpoint not found: {cfg.checkpoint}")
        tr = load_checkpoint(cfg.checkpoint, expect_m=cfg.m)
        if tr.arch != cfg.arch():
            raise ConfigError(f"checkpoint {cfg.checkpoint} architecture differs from config")
        return tr
    tcfg = cfg.train_config(train_snr_db)
    tr = build_tracker(cfg.arch(), Rng(cfg.seed).spawn(7), zeta=cfg.zeta)
    report = train(tr, tcfg, cfg.dynamics_obj(), cfg.zeta)
    log.info("trained at %.1f dB: final loss %.5f in %.1fs", tcfg.train_snr_db,
             report.final_mse, report.wall_seconds)
    if save_to:
        save_checkpoint(tr, save_to, tcfg, extra={"final_mse": report.final_mse})
    return tr


# -- metrics -----------------------------------------------------------------

def beamformer(h_hat, literal: bool = False):
    """Unit-norm energy beamformer from channel estimates (last axis).

    ``conj(h_hat)/||h_hat||`` maximizes ``|x^T h|``; ``literal`` uses
    ``h_hat/||h_hat||`` instead. A zero estimate gives a zero beam.
    """
    h_hat = np.asarray(h_hat)
    norm = np.linalg.norm(h_hat, axis=-1, keepdims=True)
    safe = np.where(norm > 0, norm, 1.0)
    x = (h_hat if literal else np.conj(h_hat)) / safe
    return np.where(norm > 0, x, 0.0)


def _per_seq(values):
    """Mean over all entries and its standard error using per-sequence means."""
    per = np.mean(values, axis=1)
    mean = float(np.mean(values))
    se = float(np.std(per, ddof=1) / np.sqrt(len(per))) if len(per) > 1 else float("nan")
    return mean, se


def paired_metrics(channels, est_prop, est_conv, zeta: float, warmup: int, literal: bool = False):
    """Row of metrics (and standard errors) from estimates on shared sequences."""
    h = channels[:, warmup:]
    out, se = {}, {}

    def sq_err(e):
        d = h - e[:, warmup:]
        return np.sum(d.real**2 + d.imag**2, axis=-1)

    def energy(e):
        x = beamformer(e[:, warmup:], literal)
        return zeta * np.abs(np.sum(x * h, axis=-1)) ** 2

    e_conv = est_conv[:, warmup:]
    aligned = (np.sum(np.abs(h) ** 2, -1) + np.sum(np.abs(e_conv) ** 2, -1)
               - 2 * np.abs(np.sum(np.conj(e_conv) * h, -1)))
    items = {
        "mse_proposed": sq_err(est_prop) if est_prop is not None else None,
        "mse_conventional": sq_err(est_conv),
        "mse_conventional_phase_aligned": np.maximum(aligned, 0.0),
        "energy_proposed": energy(est_prop) if est_prop is not None else None,
        "energy_conventional": energy(est_conv),
        "energy_perfect_csi": zeta * np.sum(np.abs(h) ** 2, axis=-1),
    }
    for k, v in items.items():
        if v is None or not np.all(np.isfinite(v)):
            out[k], se[k] = float("nan"), float("nan")
        else:
            out[k], se[k] = _per_seq(v)
    return out, se


@dataclass
class MetricsReport:
    rows: list = field(default_factory=list)
    stderr: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def row(self, snr_db: float) -> dict:
        for r in self.rows:
            if r["snr_db"] == snr_db:
                return r
        raise KeyError(snr_db)

    def se(self, snr_db: float) -> dict:
        return self.stderr[[r["snr_db"] for r in self.rows].index(snr_db)]


def _n_sequences(cfg: ExperimentConfig) -> int:
    usable = cfg.test_seq_len - cfg.t_window
    return max(1, math.ceil(cfg.n_test_samples / usable))


def test_sequences(cfg: ExperimentConfig, snr_db: float, stream: int):
    """Shared test data for one evaluation point; stream keyed by (seed, stream)."""
    rng = Rng(cfg.seed).spawn(1000, stream)
    return generate_batch(_n_sequences(cfg), cfg.test_seq_len, cfg.m, cfg.dynamics_obj(), cfg.zeta,
                          snr_db, rng)


def evaluate_point(cfg: ExperimentConfig, tr: LstmFnnTracker, snr_db: float, stream: int):
    ch, pr, fb = test_sequences(cfg, snr_db, stream)
    with np.errstate(all="ignore"):
        est_prop = tr.track_batch(fb)
    failed = not np.all(np.isfinite(est_prop))
    est_conv = kalman_track_batch(pr, fb, snr_to_noise_var(snr_db), cfg.gamma, cfg.zeta, cfg.real_channel)
    row, se = paired_metrics(ch, None if failed else est_prop, est_conv, cfg.zeta, cfg.t_window,
                             cfg.literal_beamformer)
    return {"snr_db": float(snr_db), **row}, se, failed


def run_mse_sweep(cfg: ExperimentConfig, tr: LstmFnnTracker | None = None) -> MetricsReport:
    """MSE and harvested energy of both trackers across ``cfg.snr_grid_db``."""
    if tr is None:
        tr = obtain_tracker(cfg)
    report = MetricsReport(meta=_meta(cfg, tr))
    for i, snr in enumerate(cfg.snr_grid_db):
        row, se, failed = evaluate_point(cfg, tr, snr, i)
        if failed:
            report.failures.append({"snr_db": snr, "reason": "proposed tracker produced non-finite estimates"})
        report.rows.append({k: row[k] for k in CSV_COLUMNS})
        report.stderr.append(se)
        log.info("SNR %5.1f dB: mse %.4g vs %.4g", snr, row["mse_proposed"], row["mse_conventional"])
    return report


def run_trajectory(cfg: ExperimentConfig, tr: LstmFnnTracker | None = None,
                   n_steps: int | None = None, snr_db: float | None = None) -> dict:
    """Per-step true channel and both estimates for one seeded sequence.

    Keys: ``n`` plus ``{true,proposed,conventional}_{re,im,abs}``, each an
    ``(n_steps - T, M)`` array (warm-up removed).
    """
    if tr is None:
        tr = obtain_tracker(cfg)
    n_steps = cfg.trajectory_steps if n_steps is None else n_steps
    snr = cfg.train_snr_db if snr_db is None else snr_db
    if n_steps <= cfg.t_window:
        raise ConfigError("trajectory needs more steps than the warm-up window")
    ch, pr, fb = generate_batch(1, n_steps, cfg.m, cfg.dynamics_obj(), cfg.zeta, snr,
                                Rng(cfg.seed).spawn(2000))
    est_p = tr.track_batch(fb)[0]
    est_c = kalman_track_batch(pr, fb, snr_to_noise_var(snr), cfg.gamma, cfg.zeta, cfg.real_channel)[0]
    w = cfg.t_window
    traces = {"n": np.arange(w + 1, n_steps + 1)}
    for name, arr in (("true", ch[0]), ("proposed", est_p), ("conventional", est_c)):
        arr = arr[w:]
        traces[f"{name}_re"], traces[f"{name}_im"], traces[f"{name}_abs"] = arr.real, arr.imag, np.abs(arr)
    return traces


@dataclass
class StudyReport:
    snrs_db: list
    mse: np.ndarray          # mse[i, j] = MSE(test snrs[i] | train snrs[j])
    stderr: np.ndarray
    meta: dict = field(default_factory=dict)

    def rows(self) -> list:
        return [{"test_snr_db": self.snrs_db[i], "train_snr_db": self.snrs_db[j],
                 "mse_proposed": float(self.mse[i, j])}
                for i in range(len(self.snrs_db)) for j in range(len(self.snrs_db))]


def run_train_snr_study(cfg: ExperimentConfig, trackers: dict | None = None) -> StudyReport:
    """Train one tracker per SNR in ``cfg.study_snrs_db`` and cross-evaluate.

    Every tracker at a given test SNR sees the same test sequences.
    """
    snrs = list(cfg.study_snrs_db)
    trackers = dict(trackers or {})
    for s in snrs:
        if s not in trackers:
            trackers[s] = obtain_tracker(cfg, train_snr_db=s)
    mse = np.empty((len(snrs), len(snrs)))
    se = np.empty_like(mse)
    for i, test_snr in enumerate(snrs):
        ch, _, fb = test_sequences(cfg, test_snr, 500 + i)
        h = ch[:, cfg.t_window:]
        for j, train_snr in enumerate(snrs):
            est = trackers[train_snr].track_batch(fb)[:, cfg.t_window:]
            d = h - est
            mse[i, j], se[i, j] = _per_seq(np.sum(d.real**2 + d.imag**2, axis=-1))
    return StudyReport(snrs, mse, se, _meta(cfg, None))


def _meta(cfg: ExperimentConfig, tr) -> dict:
    meta = {"prng": PRNG_ID, "seed": cfg.seed, "n_test_sequences": _n_sequences(cfg)}
    if tr is not None:
        meta["tracker_sha256"] = tr.param_hash()
    return meta


# -- emitters ----------------------------------------------------------------

def _fmt(v) -> str:
    return repr(float(v))


def emit_csv(report, path) -> None:
    """Write a sweep report (CSV_COLUMNS) or a study report (STUDY_COLUMNS)."""
    if isinstance(report, StudyReport):
        cols, rows = STUDY_COLUMNS, report.rows()
    else:
        cols, rows = CSV_COLUMNS, report.rows
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in cols])


def read_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        return [{k: float(v) for k, v in row.items()} for row in reader]


def emit_traces_csv(traces: dict, path) -> None:
    m = traces["true_re"].shape[1]
    cols = ["n"]
    for name in ("true", "proposed", "conventional"):
        for part in ("re", "im", "abs"):
            cols += [f"{name}_{part}_{k}" for k in range(m)]
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(cols)
        for t in range(len(traces["n"])):
            row = [str(int(traces["n"][t]))]
            for name in ("true", "proposed", "conventional"):
                for part in ("re", "im", "abs"):
                    row += [_fmt(v) for v in traces[f"{name}_{part}"][t]]
            w.writerow(row)


def emit_plot(report: MetricsReport, path) -> None:
    """Two-panel SVG: MSE (log scale) and average harvested energy versus SNR."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "wettrack"
    snr = [r["snr_db"] for r in report.rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    for key, label, style in (("mse_proposed", "LSTM+FNN", "o-"),
                              ("mse_conventional", "Kalman (Gram)", "s--"),
                              ("mse_conventional_phase_aligned", "Kalman, phase-aligned", "^:")):
        ax1.plot(snr, [r[key] for r in report.rows], style, label=label)
    ax1.set_yscale("log")
    ax1.set_xlabel("SNR (dB)")
    ax1.set_ylabel("channel estimation MSE")
    ax1.legend(fontsize=8)
    for key, label, style in (("energy_proposed", "LSTM+FNN", "o-"),
                              ("energy_conventional", "Kalman (Gram)", "s--"),
                              ("energy_perfect_csi", "perfect CSI", "k-")):
        ax2.plot(snr, [r[key] for r in report.rows], style, label=label)
    ax2.set_xlabel("SNR (dB)")
    ax2.set_ylabel("average harvested energy")
    ax2.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
