#!/usr/bin/env python3
"""End-to-end splice localization with pipeline 1 on synthetic upscaled-donor splices."""
import argparse
import json

from resample_forensics.experiments import SpliceConfig, localization_experiment, train_channel_models
from resample_forensics.pipeline import load_channel_models


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--models", help="directory of trained channel models (trained afresh when omitted)")
    ap.add_argument("--n-images", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    models = load_channel_models(args.models) if args.models else train_channel_models(seed=args.seed)
    res = localization_experiment(models, SpliceConfig(n_images=args.n_images, seed=args.seed))
    print(json.dumps({"median_iou": res["median_iou"], "win_rate": res["win_rate"],
                      "iou": [round(float(v), 4) for v in res["iou"]]}))


if __name__ == "__main__":
    main()
