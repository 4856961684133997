"""PNG rendering for ROC curves and detection panels (Pillow only)."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .pipeline import DetectionResult, RocCurve
from .segmentation import CHANNELS

_COLORS = [(31, 119, 180), (214, 39, 40), (44, 160, 44), (148, 103, 189), (255, 127, 14), (23, 190, 207)]


def render_roc(curves: dict[str, RocCurve], path, size: int = 420) -> Path:
    margin = 40
    img = Image.new("RGB", (size, size), "white")
    draw = ImageDraw.Draw(img)
    span = size - 2 * margin

    def xy(f, t):
        return margin + f * span, size - margin - t * span

    draw.rectangle([margin, margin, size - margin, size - margin], outline=(0, 0, 0))
    draw.line([xy(0, 0), xy(1, 1)], fill=(180, 180, 180))
    for i, (name, roc) in enumerate(curves.items()):
        color = _COLORS[i % len(_COLORS)]
        draw.line([xy(f, t) for f, t in zip(roc.fpr, roc.tpr)], fill=color, width=2)
        draw.text((margin + 6, margin + 6 + 12 * i), f"{name}  AUC {roc.auc:.3f}", fill=color)
    draw.text((size // 2 - 10, size - margin + 12), "FPR", fill=(0, 0, 0))
    draw.text((6, size // 2), "TPR", fill=(0, 0, 0))
    path = Path(path)
    img.save(path)
    return path


def to_gray8(values: np.ndarray) -> Image.Image:
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return Image.fromarray(np.round(v * 255).astype(np.uint8), mode="L")


def render_panels(image: np.ndarray, result: DetectionResult, path, cell: int = 192) -> Path:
    """Rows: six raw heatmaps, six filtered heatmaps, then image / gray mask / binary mask."""
    cols = len(CHANNELS)
    sheet = Image.new("L", (cols * cell, 3 * cell), 255)

    def put(arr, r, c):
        sheet.paste(to_gray8(arr).resize((cell, cell), Image.NEAREST), (c * cell, r * cell))

    for c in range(cols):
        put(result.heatmaps.data[c], 0, c)
        put(result.filtered[c], 1, c)
    put(image, 2, 0)
    put(result.gray, 2, 1)
    put(result.mask.astype(np.float64), 2, 2)
    path = Path(path)
    sheet.save(path)
    return path
