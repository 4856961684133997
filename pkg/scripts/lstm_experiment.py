#!/usr/bin/env python3
"""Scaled LSTM patch-classification experiment (p-map input vs raw pixels)."""
import argparse
import json

from resample_forensics.experiments import LstmExperimentConfig, lstm_dataset, lstm_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--inputs", nargs="+", default=["fast", "pixels"], choices=["fast", "em", "pixels"])
    ap.add_argument("--hidden", type=int, default=LstmExperimentConfig.hidden)
    ap.add_argument("--epochs", type=int, default=LstmExperimentConfig.epochs)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    data = lstm_dataset(LstmExperimentConfig(seed=args.seed))
    for kind in args.inputs:
        cfg = LstmExperimentConfig(inputs=kind, hidden=args.hidden, epochs=args.epochs, seed=args.seed)
        r = lstm_experiment(cfg, data, log=print if args.verbose else None)
        print(json.dumps({"inputs": kind, "auc": r.auc, "train_auc": r.train_auc,
                          "seconds": round(r.seconds, 1)}), flush=True)


if __name__ == "__main__":
    main()
