"""Command-line interface.

Exit status: 0 on success, 2 on usage / input / configuration errors,
1 on runtime failures.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, substream
from .dataset import (
    MANIPULATED,
    TASKS,
    build_patch_dataset,
    load_ground_truth,
    load_patch_dataset,
    load_sources,
    save_patch_dataset,
    synthetic_sources,
)
from .errors import (
    ConfigError,
    DatasetError,
    DimensionError,
    EvaluationError,
    ForensicsError,
    ParameterError,
    ShapeError,
    UnsupportedFormatError,
)
from .features import radon_features
from .imaging import read_image, write_png
from .nnet import lstm_predict, mlp_predict, save_model, train_lstm_classifier, train_mlp
from .pipeline import MODEL_SUFFIX, default_workers, detect, evaluate_roc, iou, load_channel_models, lstm_inputs, pixel_f1
from .report import render_panels, render_roc, to_gray8
from .segmentation import CHANNELS

log = logging.getLogger("resample_forensics")

INPUT_ERRORS = (ConfigError, ParameterError, DimensionError, ShapeError, UnsupportedFormatError,
                DatasetError, EvaluationError, FileNotFoundError)


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# config resolution


def resolve_config(args) -> RunConfig:
    base = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    threads = args.threads
    if threads is None and os.environ.get("RESAMPLE_FORENSICS_THREADS"):
        threads = default_workers()
    cfg = base.merged({
        "seed": args.seed,
        "threads": threads,
        "patch_size": args.patch_size,
        "stride": args.stride,
        "interpolation": args.interp,
        "pmap": args.pmap,
    })
    log.info("resolved config: %s", json.dumps(cfg.to_dict(), sort_keys=True))
    log.info("seed: %d", cfg.seed)
    return cfg


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_dataset(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    if args.action == "synth":
        out.mkdir(parents=True, exist_ok=True)
        for i, img in enumerate(synthetic_sources(args.n, args.size, substream(cfg.seed, "dataset"))):
            write_png(out / f"synth_{i:04d}.png", img)
        print(f"wrote {args.n} synthetic sources to {out}")
        return 0
    if not args.src:
        raise UsageError("dataset build needs --src")
    cfg = cfg.merged({"sources": args.src}).validate(require_paths=("sources",))
    loaded = load_sources(cfg.sources)
    if len(loaded) < 2:
        raise DatasetError(f"need at least two source images in {cfg.sources}, found {len(loaded)}")
    ds = build_patch_dataset([img for _, img in loaded], args.task, args.n, seed=substream(cfg.seed, "dataset"),
                             patch_size=cfg.patch_size, allow_jpeg=not args.no_jpeg,
                             interpolation=cfg.interpolation, source_ids=[name for name, _ in loaded])
    manifest = save_patch_dataset(ds, out)
    _write_json(out / "run.json", {"command": "dataset build", "task": args.task, "n": args.n,
                                   "config": cfg.to_dict()})
    print(f"wrote {len(ds.labels)} patches ({int(ds.labels.sum())} positive) to {manifest}")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    ds = load_patch_dataset(args.data)
    x_tr, y_tr = ds.subset("train")
    x_te, y_te = ds.subset("test")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = {"command": f"train {args.kind}", "task": ds.task, "config": cfg.to_dict()}
    if args.kind == "mlp":
        tc = cfg.mlp_train_config()
        model, losses = train_mlp(radon_features(x_tr, cfg.n_angles), y_tr, tc)
        report["final_loss"] = losses[-1]
        if len(np.unique(y_te)) == 2:
            report["test_auc"] = evaluate_roc(mlp_predict(model, radon_features(x_te, cfg.n_angles)), y_te).auc
        path = out / f"{ds.task}{MODEL_SUFFIX}"
    else:
        tc = cfg.lstm_train_config()
        kind = args.inputs or cfg.pmap
        model, hist = train_lstm_classifier(lstm_inputs(x_tr, kind, cfg.pmap_sigma), y_tr, tc,
                                            hidden=cfg.lstm_hidden, n_layers=cfg.lstm_layers, augment=True,
                                            log=log.info)
        report["final_loss"] = hist.epoch_losses[-1]
        report["inputs"] = kind
        if len(np.unique(y_te)) == 2:
            probs = lstm_predict(model, lstm_inputs(x_te, kind, cfg.pmap_sigma))[:, 1]
            report["test_auc"] = evaluate_roc(probs, y_te).auc
        path = out / f"lstm{MODEL_SUFFIX}"
    save_model(path, model, tc.to_dict(), {"task": ds.task, "seed": cfg.seed})
    _write_json(out / f"{path.stem}.train.json", report)
    print(f"saved {path}" + (f" (test AUC {report['test_auc']:.4f})" if "test_auc" in report else ""))
    return 0


def read_scores_csv(path) -> tuple[np.ndarray, np.ndarray]:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                rows.append((float(row[0]), int(float(row[1]))))
            except (ValueError, IndexError):
                if rows:
                    raise ParameterError(f"{path}: malformed row {row}") from None
                # header line
    if not rows:
        raise ParameterError(f"{path}: no score rows")
    arr = np.array(rows)
    return arr[:, 0], arr[:, 1].astype(int)


def cmd_eval(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.action == "roc":
        scores, labels = read_scores_csv(args.scores)
        roc = evaluate_roc(scores, labels)
        (out / "roc.csv").write_text(roc.to_csv())
        _write_json(out / "auc.json", {"auc": roc.auc, "n": int(len(labels)), "positives": int(labels.sum())})
        print(f"AUC {roc.auc:.6f}")
        return 0
    truth = {name: mask for name, _, mask in load_ground_truth(args.truth)}
    rows = {}
    for name, mask in truth.items():
        pred_path = Path(args.pred) / f"{name}_mask.png"
        if not pred_path.exists():
            pred_path = Path(args.pred) / name / "mask.png"
        if not pred_path.exists():
            log.warning("no predicted mask for %s", name)
            continue
        pred = read_image(pred_path) > 0.5
        rows[name] = {"iou": iou(pred, mask), "f1": pixel_f1(pred, mask)}
    summary = {"images": rows,
               "median_iou": float(np.median([r["iou"] for r in rows.values()])) if rows else None,
               "mean_f1": float(np.mean([r["f1"] for r in rows.values()])) if rows else None}
    _write_json(out / "masks.json", summary)
    print(f"evaluated {len(rows)} masks; median IoU {summary['median_iou']}")
    return 0


def run_detect(image_path, models_dir, out: Path, cfg: RunConfig) -> dict:
    img = read_image(image_path)
    models = load_channel_models(models_dir)
    result = detect(img, models, cfg.detect_config())
    out.mkdir(parents=True, exist_ok=True)
    to_gray8(result.mask.astype(np.float64)).save(out / "mask.png")
    to_gray8(result.gray).save(out / "gray.png")
    for name, grid_map in zip(CHANNELS, result.heatmaps.data):
        to_gray8(grid_map).save(out / f"heatmap_{name}.png")
    report = {"image": str(image_path), **result.summary(), "config": cfg.to_dict()}
    _write_json(out / "report.json", report)
    return {"image": img, "result": result, "report": report}


def cmd_detect(args, cfg: RunConfig) -> int:
    cfg = cfg.merged({"models": args.models}).validate(require_paths=("models",))
    done = run_detect(args.image, cfg.models, Path(args.out), cfg)
    print(f"confidence {done['report']['confidence']:.4f}; selected {done['report']['selected_channels']}")
    return 0


def cmd_report(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"config": cfg.to_dict(), "roc": {}}
    curves = {}
    for path in args.scores or []:
        scores, labels = read_scores_csv(path)
        curves[Path(path).stem] = evaluate_roc(scores, labels)
        summary["roc"][Path(path).stem] = curves[Path(path).stem].auc
    if curves:
        render_roc(curves, out / "roc.png")
    if args.image:
        if not args.models:
            raise UsageError("report --image needs --models")
        done = run_detect(args.image, args.models, out / "detect", cfg)
        render_panels(done["image"], done["result"], out / "panels.png")
        summary["detect"] = done["report"]
    _write_json(out / "summary.json", summary)
    print(f"report written to {out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (flags override its values)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--threads", type=int, help="worker cap (fallback: RESAMPLE_FORENSICS_THREADS)")
    common.add_argument("--patch-size", type=int, dest="patch_size")
    common.add_argument("--stride", type=int)
    common.add_argument("--interp", choices=("nearest", "bilinear", "bicubic"))
    common.add_argument("--pmap", choices=("fast", "em"))
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="resample-forensics",
                                     description="Resampling-trace forgery detection and localization.")
    sub = parser.add_subparsers(dest="command", required=True)

    ds = sub.add_parser("dataset", help="build patch datasets").add_subparsers(dest="action", required=True)
    b = ds.add_parser("build", parents=[common])
    b.add_argument("--task", required=True, choices=TASKS + (MANIPULATED,))
    b.add_argument("--n", type=int, required=True)
    b.add_argument("--src")
    b.add_argument("--out", required=True)
    b.add_argument("--no-jpeg", action="store_true", help="keep JPEG steps out of the chains")
    s = ds.add_parser("synth", parents=[common], help="write synthetic raw source images")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--size", type=int, default=512)
    s.add_argument("--out", required=True)

    tr = sub.add_parser("train", help="train a classifier").add_subparsers(dest="kind", required=True)
    for kind in ("mlp", "lstm"):
        t = tr.add_parser(kind, parents=[common])
        t.add_argument("--data", required=True, help="dataset directory (manifest.jsonl)")
        t.add_argument("--out", required=True, help="model directory")
        if kind == "lstm":
            t.add_argument("--inputs", choices=("fast", "em", "pixels"))

    ev = sub.add_parser("eval", help="evaluate scores or masks").add_subparsers(dest="action", required=True)
    r = ev.add_parser("roc", parents=[common])
    r.add_argument("--scores", required=True, help="CSV of score,label rows")
    r.add_argument("--out", required=True)
    m = ev.add_parser("masks", parents=[common])
    m.add_argument("--pred", required=True)
    m.add_argument("--truth", required=True)
    m.add_argument("--out", required=True)

    d = sub.add_parser("detect", parents=[common], help="detect and localize in one image")
    d.add_argument("image")
    d.add_argument("--models", required=True)
    d.add_argument("--out", required=True)

    rp = sub.add_parser("report", parents=[common], help="render ROC curves and detection panels")
    rp.add_argument("--scores", nargs="*", help="score CSVs, one ROC curve each")
    rp.add_argument("--image")
    rp.add_argument("--models")
    rp.add_argument("--out", required=True)
    return parser


COMMANDS = {"dataset": cmd_dataset, "train": cmd_train, "eval": cmd_eval, "detect": cmd_detect, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ForensicsError, OSError, ArithmeticError, RuntimeError) as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
