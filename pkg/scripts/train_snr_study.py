#!/usr/bin/env python3
"""Cross-evaluate trackers trained at different SNRs on shared test data."""
import argparse
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
    study = harness.run_train_snr_study(cfg)
    harness.emit_csv(study, os.path.join(cfg.output_dir, "snr_study.csv"))
    print("test \\ train " + " ".join(f"{s:>9.0f}" for s in study.snrs_db))
    for i, s in enumerate(study.snrs_db):
        print(f"{s:>12.0f} " + " ".join(f"{v:9.4f}" for v in study.mse[i]))


if __name__ == "__main__":
    main()
