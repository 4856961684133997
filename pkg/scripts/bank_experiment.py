#!/usr/bin/env python3
"""Scaled classifier-bank experiment: MLP and QDA test AUC per task."""
import argparse
import json

from resample_forensics.dataset import synthetic_sources
from resample_forensics.experiments import BankConfig, bank_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--tasks", nargs="+", default=["upsample", "downsample", "rotate_cw", "rotate_ccw", "shear"])
    ap.add_argument("--patch-size", type=int, default=64)
    ap.add_argument("--n-patches", type=int, default=2500)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    sources = synthetic_sources(40, 512, args.seed)
    for task in args.tasks:
        cfg = BankConfig(task=task, patch_size=args.patch_size, n_patches=args.n_patches,
                         epochs=args.epochs, seed=args.seed)
        r = bank_experiment(cfg, sources)
        print(json.dumps({"task": task, "mlp_auc": r.mlp_auc, "qda_auc": r.qda_auc,
                          "seconds": round(r.seconds, 1)}), flush=True)


if __name__ == "__main__":
    main()
