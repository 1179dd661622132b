"""Command-line entry point: ``wettrack <subcommand> [--config F] [--seed S] [--out DIR]``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import harness
from .channel import generate_sequence, load_sequence_csv, save_sequence_csv
from .kalman import kalman_track_batch
from .numerics import Rng
from .tracker import TrainingDiverged, build_tracker, save_checkpoint, train

GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


def _parse_set(items):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _config(args) -> harness.ExperimentConfig:
    overrides = _parse_set(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = args.out
    if getattr(args, "checkpoint", None) and args.command != "train":
        overrides["checkpoint"] = args.checkpoint
    if getattr(args, "literal_beamformer", False):
        overrides["literal_beamformer"] = True
    return harness.load_config(args.config, overrides)


def _outdir(cfg) -> str:
    os.makedirs(cfg.output_dir, exist_ok=True)
    return cfg.output_dir


def cmd_train(args, cfg):
    out = _outdir(cfg)
    tcfg = cfg.train_config()
    tr = build_tracker(cfg.arch(), Rng(cfg.seed).spawn(7), zeta=cfg.zeta)

    def progress(epoch, loss):
        logging.info("epoch %d loss %.6f", epoch, loss)

    report = train(tr, tcfg, cfg.dynamics_obj(), cfg.zeta, on_epoch=progress)
    ckpt = args.checkpoint or os.path.join(out, "tracker.ckpt")
    save_checkpoint(tr, ckpt, tcfg, extra={"final_mse": report.final_mse})
    with open(os.path.join(out, "loss.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["phase", "epoch", "loss"])
        for i, v in enumerate(report.loss_history, 1):
            w.writerow(["teacher_forced", i, repr(float(v))])
        for i, v in enumerate(report.closed_loop_history, 1):
            w.writerow(["closed_loop", i, repr(float(v))])
    print(f"final training MSE {report.final_mse:.6g}; checkpoint {ckpt}")


def cmd_track(args, cfg):
    out = _outdir(cfg)
    tr = harness.obtain_tracker(cfg)
    if args.sequence:
        seq = load_sequence_csv(args.sequence)
    else:
        seq = generate_sequence(args.n_steps or cfg.trajectory_steps, cfg.m, cfg.dynamics_obj(),
                                cfg.zeta, cfg.train_snr_db, Rng(cfg.seed).spawn(3000))
        save_sequence_csv(seq, os.path.join(out, "sequence.csv"))
    if seq.m != cfg.m:
        raise UsageError(f"sequence has M={seq.m}, config has m={cfg.m}")
    est_p = tr.track_batch(seq.feedbacks[None])[0]
    est_c = kalman_track_batch(seq.probes[None], seq.feedbacks[None], seq.noise_var, seq.gamma,
                               seq.zeta, cfg.real_channel)[0]
    w = cfg.t_window
    traces = {"n": list(range(w + 1, seq.n_steps + 1))}
    for name, arr in (("true", seq.channels), ("proposed", est_p), ("conventional", est_c)):
        arr = arr[w:]
        traces[f"{name}_re"], traces[f"{name}_im"], traces[f"{name}_abs"] = arr.real, arr.imag, np.abs(arr)
    traces["n"] = np.asarray(traces["n"])
    harness.emit_traces_csv(traces, os.path.join(out, "track.csv"))
    mse_p = float(np.mean(np.sum(np.abs(seq.channels[w:] - est_p[w:]) ** 2, -1)))
    mse_c = float(np.mean(np.sum(np.abs(seq.channels[w:] - est_c[w:]) ** 2, -1)))
    print(f"MSE proposed {mse_p:.6g}, conventional {mse_c:.6g}")


def cmd_sweep(args, cfg):
    out = _outdir(cfg)
    report = harness.run_mse_sweep(cfg)
    harness.emit_csv(report, os.path.join(out, "sweep.csv"))
    harness.emit_plot(report, os.path.join(out, "sweep.svg"))
    for f in report.failures:
        print(f"failure at {f['snr_db']} dB: {f['reason']}", file=sys.stderr)
    print(f"wrote {os.path.join(out, 'sweep.csv')}")


def cmd_trajectory(args, cfg):
    out = _outdir(cfg)
    traces = harness.run_trajectory(cfg, n_steps=args.n_steps)
    harness.emit_traces_csv(traces, os.path.join(out, "trajectory.csv"))
    print(f"wrote {os.path.join(out, 'trajectory.csv')}")


def cmd_snr_study(args, cfg):
    out = _outdir(cfg)
    study = harness.run_train_snr_study(cfg)
    harness.emit_csv(study, os.path.join(out, "snr_study.csv"))
    print(f"wrote {os.path.join(out, 'snr_study.csv')}")


def cmd_gradcheck(args, cfg):
    from .gradcheck import run_suite
    out = _outdir(cfg)
    res = run_suite(n_trackers=args.n_trackers, seed=cfg.seed)
    with open(os.path.join(out, "gradcheck.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["component", "max_rel_err"])
        for k, v in res.items():
            w.writerow([k, repr(float(v))])
    for k, v in res.items():
        print(f"{k:24s} {v:.3e}")
    worst = max(res.values())
    print(f"max relative error {worst:.3e}")
    if worst > GRADCHECK_TOL:
        raise RuntimeError(f"gradient check failed: {worst:.3e} > {GRADCHECK_TOL:g}")


COMMANDS = {
    "train": cmd_train, "track": cmd_track, "sweep": cmd_sweep,
    "trajectory": cmd_trajectory, "snr-study": cmd_snr_study, "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value TOML file")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="wettrack", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name in ("train", "track", "sweep", "trajectory"):
            sp.add_argument("--checkpoint", help="checkpoint to write" if name == "train" else
                            "tracker checkpoint to load (trained inline when omitted)")
        if name == "sweep":
            sp.add_argument("--literal-beamformer", action="store_true",
                            help="beam along h_hat instead of conj(h_hat)")
        if name in ("track", "trajectory"):
            sp.add_argument("--n-steps", type=int)
        if name == "track":
            sp.add_argument("--sequence", help="sequence CSV to track (generated if absent)")
        if name == "gradcheck":
            sp.add_argument("--n-trackers", type=int, default=100)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
    except (harness.ConfigError, UsageError) as exc:
        print(f"wettrack: error: {exc}", file=sys.stderr)
        return 2
    try:
        COMMANDS[args.command](args, cfg)
    except (harness.ConfigError, UsageError) as exc:
        print(f"wettrack: error: {exc}", file=sys.stderr)
        return 2
    except (TrainingDiverged, RuntimeError, ValueError, OSError) as exc:
        print(f"wettrack: failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
