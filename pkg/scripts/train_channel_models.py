#!/usr/bin/env python3
"""Train the six heatmap-channel MLPs on synthetic sources and save them for `resample-forensics detect`."""
import argparse
from pathlib import Path

from resample_forensics.experiments import train_channel_models
from resample_forensics.nnet import save_model
from resample_forensics.pipeline import MODEL_SUFFIX


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True, type=Path)
    ap.add_argument("--n-patches", type=int, default=2500)
    ap.add_argument("--n-sources", type=int, default=40)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    models = train_channel_models(args.n_patches, args.n_sources, args.seed, args.epochs, log=print)
    args.out.mkdir(parents=True, exist_ok=True)
    for name, model in models.items():
        save_model(args.out / f"{name}{MODEL_SUFFIX}", model, extra={"task": name, "seed": args.seed})
    print(f"saved {len(models)} models to {args.out}")


if __name__ == "__main__":
    main()
