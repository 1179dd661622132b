#!/usr/bin/env python3
"""MSE and harvested energy of both trackers versus SNR; writes CSV, standard errors and SVG."""
import argparse
import csv
import os

from wettrack import harness


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=os.path.join(os.path.dirname(__file__), "..", "configs", "ci.toml"))
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out")
    args = ap.parse_args()
    over = {k: v for k, v in (("seed", args.seed), ("output_dir", args.out)) if v is not None}
    cfg = harness.load_config(args.config, over)
    os.makedirs(cfg.output_dir, exist_ok=True)
    rep = harness.run_mse_sweep(cfg)
    harness.emit_csv(rep, os.path.join(cfg.output_dir, "sweep.csv"))
    harness.emit_plot(rep, os.path.join(cfg.output_dir, "sweep.svg"))
    with open(os.path.join(cfg.output_dir, "sweep_stderr.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(harness.CSV_COLUMNS)
        for row, se in zip(rep.rows, rep.stderr):
            w.writerow([repr(row["snr_db"])] + [repr(se[c]) for c in harness.CSV_COLUMNS[1:]])
    for row in rep.rows:
        print(" ".join(f"{k}={v:.4g}" for k, v in row.items()))


if __name__ == "__main__":
    main()
