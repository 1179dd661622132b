#!/usr/bin/env python3
"""True channel and both estimates over one seeded sequence (real, imaginary, magnitude)."""
import argparse
import os

from wettrack import harness


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=os.path.join(os.path.dirname(__file__), "..", "configs", "ci.toml"))
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out")
    ap.add_argument("--n-steps", type=int)
    ap.add_argument("--plot", action="store_true", help="also write trajectory.svg")
    args = ap.parse_args()
    over = {k: v for k, v in (("seed", args.seed), ("output_dir", args.out)) if v is not None}
    cfg = harness.load_config(args.config, over)
    os.makedirs(cfg.output_dir, exist_ok=True)
    traces = harness.run_trajectory(cfg, n_steps=args.n_steps)
    harness.emit_traces_csv(traces, os.path.join(cfg.output_dir, "trajectory.csv"))
    if args.plot:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        plt.rcParams["svg.hashsalt"] = "wettrack"
        fig, axes = plt.subplots(cfg.m, 1, figsize=(8, 2.4 * cfg.m), sharex=True, squeeze=False)
        for k, ax in enumerate(axes[:, 0]):
            ax.plot(traces["n"], traces["true_re"][:, k], "k-", lw=1, label="true")
            ax.plot(traces["n"], traces["proposed_re"][:, k], lw=1, label="LSTM+FNN")
            ax.plot(traces["n"], traces["conventional_re"][:, k], lw=1, label="Kalman (Gram)")
            ax.set_ylabel(f"Re h[{k}]")
        axes[0, 0].legend(fontsize=8)
        axes[-1, 0].set_xlabel("time step n")
        fig.tight_layout()
        fig.savefig(os.path.join(cfg.output_dir, "trajectory.svg"), metadata={"Date": None})


if __name__ == "__main__":
    main()
