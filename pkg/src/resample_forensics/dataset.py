"""Synthetic training / evaluation data.

Patches are produced transform-then-crop: a region around the patch is
pushed through a random transform chain and only the central patch is kept,
so canvas borders never reach the patch. Each patch gets its own RNG stream
derived from ``(seed, index)``; generation is a pure function of the source
images and the seed.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DatasetError, DimensionError, ParameterError
from .imaging import (
    TransformKind,
    TransformSpec,
    affine_resample,
    jpeg_roundtrip,
    quantize8,
    read_image,
    write_png,
)

TASKS = ("jpeg_quality", "upsample", "downsample", "rotate_cw", "rotate_ccw", "shear")
# patch-classification task: resampled then recompressed vs recompressed only
MANIPULATED = "manipulated"
GEOMETRIC = (TransformKind.UPSCALE, TransformKind.DOWNSCALE, TransformKind.ROTATE_CW,
             TransformKind.ROTATE_CCW, TransformKind.SHEAR)
TASK_KIND = {
    "upsample": TransformKind.UPSCALE,
    "downsample": TransformKind.DOWNSCALE,
    "rotate_cw": TransformKind.ROTATE_CW,
    "rotate_ccw": TransformKind.ROTATE_CCW,
    "shear": TransformKind.SHEAR,
    "jpeg_quality": TransformKind.JPEG,
}
# a positive chain never also contains the step that would undo its transform
_OPPOSITE = {
    TransformKind.UPSCALE: TransformKind.DOWNSCALE,
    TransformKind.DOWNSCALE: TransformKind.UPSCALE,
    TransformKind.ROTATE_CW: TransformKind.ROTATE_CCW,
    TransformKind.ROTATE_CCW: TransformKind.ROTATE_CW,
}
JPEG_LOW_MAX = 85
MANIFEST_SCHEMA = 1
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp")


@dataclass(frozen=True)
class ParameterRanges:
    upscale: tuple[float, float] = (1.05, 2.0)
    downscale: tuple[float, float] = (0.5, 0.95)
    rotation: tuple[float, float] = (1.0, 45.0)
    shear: tuple[float, float] = (0.05, 0.3)
    jpeg_low: tuple[int, int] = (50, 84)
    jpeg_high: tuple[int, int] = (86, 100)
    recompress: tuple[int, int] = (85, 95)


def draw_step(rng: np.random.Generator, kind: TransformKind, ranges: ParameterRanges,
              jpeg_low: bool | None = None) -> TransformSpec:
    if kind is TransformKind.JPEG:
        if jpeg_low is None:
            lo, hi = ranges.jpeg_low[0], ranges.jpeg_high[1]
        else:
            lo, hi = ranges.jpeg_low if jpeg_low else ranges.jpeg_high
        return TransformSpec(kind, int(rng.integers(lo, hi + 1)))
    span = {
        TransformKind.UPSCALE: ranges.upscale,
        TransformKind.DOWNSCALE: ranges.downscale,
        TransformKind.ROTATE_CW: ranges.rotation,
        TransformKind.ROTATE_CCW: ranges.rotation,
        TransformKind.SHEAR: ranges.shear,
    }[kind]
    value = float(rng.uniform(*span))
    if kind is TransformKind.SHEAR and rng.random() < 0.5:
        value = -value
    return TransformSpec(kind, value)


@dataclass(frozen=True)
class TransformChain:
    steps: tuple[TransformSpec, ...]
    seed: int = 0

    def __post_init__(self):
        if len(self.steps) > 3:
            raise ParameterError("a transform chain has at most 3 steps")

    def kinds(self) -> list[TransformKind]:
        return [s.kind for s in self.steps]

    def to_list(self) -> list[dict]:
        return [s.to_dict() for s in self.steps]

    @classmethod
    def from_list(cls, steps: list[dict], seed: int = 0) -> "TransformChain":
        return cls(tuple(TransformSpec.from_dict(s) for s in steps), seed)


def chain_labels(chain: TransformChain) -> dict[str, bool]:
    """The six characteristic flags, derived mechanically from the chain."""
    kinds = chain.kinds()
    jpegs = [s for s in chain.steps if s.kind is TransformKind.JPEG]
    return {
        "jpeg_quality": bool(jpegs) and jpegs[-1].parameter <= JPEG_LOW_MAX,
        "upsample": TransformKind.UPSCALE in kinds,
        "downsample": TransformKind.DOWNSCALE in kinds,
        "rotate_cw": TransformKind.ROTATE_CW in kinds,
        "rotate_ccw": TransformKind.ROTATE_CCW in kinds,
        "shear": TransformKind.SHEAR in kinds,
    }


def _pick(rng: np.random.Generator, pool: list, k: int) -> list:
    idx = rng.choice(len(pool), size=min(k, len(pool)), replace=False)
    return [pool[i] for i in idx]


def random_chain(rng: np.random.Generator, task: str, positive: bool = True, allow_jpeg: bool = True,
                 max_extra: int = 2, ranges: ParameterRanges = ParameterRanges(), seed: int = 0) -> TransformChain:
    """Random chain that does (``positive``) or does not contain the task's transform.

    Positive chains hold exactly one step of the task's kind plus up to
    ``max_extra`` other steps; negative chains hold 0..``max_extra`` steps of
    other kinds. For ``jpeg_quality`` the label is carried by the final JPEG
    step's quality (``<= 85`` positive).
    """
    if task == MANIPULATED:
        return _manipulation_chain(rng, positive, ranges, seed)
    if task not in TASK_KIND:
        raise ParameterError(f"unknown task {task!r}; expected one of {TASKS + (MANIPULATED,)}")
    target = TASK_KIND[task]
    pool = [k for k in TransformKind if k is not TransformKind.JPEG and k is not target]
    if positive and target in _OPPOSITE:
        pool.remove(_OPPOSITE[target])
    jpeg_extra = allow_jpeg and target is not TransformKind.JPEG
    if jpeg_extra:
        pool.append(TransformKind.JPEG)

    if target is TransformKind.JPEG:
        # geometric steps, then (for positives, or half of negatives) a final JPEG
        n_geo = int(rng.integers(0, max_extra + 1))
        steps = [draw_step(rng, k, ranges) for k in _pick(rng, pool, n_geo)]
        if positive:
            steps.append(draw_step(rng, TransformKind.JPEG, ranges, jpeg_low=True))
        elif rng.random() < 0.5:
            steps.append(draw_step(rng, TransformKind.JPEG, ranges, jpeg_low=False))
        return TransformChain(tuple(steps[-3:]), seed)

    n_extra = int(rng.integers(0, max_extra + 1))
    steps = [draw_step(rng, k, ranges) for k in _pick(rng, pool, n_extra)]
    if positive:
        steps.insert(int(rng.integers(0, len(steps) + 1)), draw_step(rng, target, ranges))
    return TransformChain(tuple(steps), seed)


def _manipulation_chain(rng: np.random.Generator, positive: bool, ranges: ParameterRanges,
                        seed: int) -> TransformChain:
    steps = []
    if positive:
        steps.append(draw_step(rng, GEOMETRIC[int(rng.integers(0, len(GEOMETRIC)))], ranges))
    lo, hi = ranges.recompress
    steps.append(TransformSpec(TransformKind.JPEG, int(rng.integers(lo, hi + 1))))
    return TransformChain(tuple(steps), seed)


# ---------------------------------------------------------------------------
# applying chains to a region around a patch


def warp_center(img: np.ndarray, matrix: np.ndarray, out_shape: tuple[int, int],
                interpolation: str = "bilinear") -> np.ndarray:
    """Central ``out_shape`` window of the warped image (image center maps to window center)."""
    h, w = img.shape
    c_in = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
    c_out = np.array([(out_shape[1] - 1) / 2.0, (out_shape[0] - 1) / 2.0])
    a = np.asarray(matrix, dtype=np.float64)
    return affine_resample(img, a, offset=c_out - a @ c_in, interpolation=interpolation,
                           output_shape=out_shape)


def _needed_input(step: TransformSpec, out_shape: tuple[int, int], margin: int = 4) -> tuple[int, int]:
    if step.kind is TransformKind.JPEG:
        return out_shape
    inv = np.linalg.inv(step.matrix())
    h, w = out_shape
    corners = np.array([[-w / 2, -h / 2], [w / 2, -h / 2], [-w / 2, h / 2], [w / 2, h / 2]]).T
    ext = np.abs(inv @ corners).max(axis=1) * 2
    return int(math.ceil(ext[1])) + 2 * margin, int(math.ceil(ext[0])) + 2 * margin


def chain_footprint(chain: TransformChain, out_shape: tuple[int, int]) -> list[tuple[int, int]]:
    """Canvas shape needed before each step (last entry is ``out_shape``)."""
    shapes = [tuple(out_shape)]
    for step in reversed(chain.steps):
        shapes.append(_needed_input(step, shapes[-1]))
    return shapes[::-1]


def apply_chain_cropped(region: np.ndarray, chain: TransformChain, out_shape: tuple[int, int],
                        interpolation: str = "bilinear") -> np.ndarray:
    """Run ``chain`` on ``region`` and return the central ``out_shape`` window.

    Every intermediate is stored on the 8-bit grid, as an edited image would
    be when saved.
    """
    shapes = chain_footprint(chain, out_shape)
    img = quantize8(region)
    for step, shape in zip(chain.steps, shapes[1:]):
        if step.kind is TransformKind.JPEG:
            img = _center_crop(img, shape)
            img = jpeg_roundtrip(img, int(step.parameter))
        else:
            img = quantize8(warp_center(img, step.matrix(), shape, interpolation))
    return _center_crop(img, out_shape)


def _center_crop(img: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    h, w = img.shape
    th, tw = shape
    if th > h or tw > w:
        raise DimensionError(f"cannot crop {shape} from {img.shape}")
    y = (h - th) // 2
    x = (w - tw) // 2
    return img[y : y + th, x : x + tw]


# ---------------------------------------------------------------------------
# synthetic raw sources


def synth_raw_image(rng: np.random.Generator, size: int = 512) -> np.ndarray:
    """A camera-like raw image: power-law texture, occluding shapes, optics blur, sensor noise.

    Stored on the 8-bit grid.
    """
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.fftfreq(size)[None, :]
    f = np.sqrt(fx * fx + fy * fy)
    f[0, 0] = 1.0
    beta = rng.uniform(1.6, 2.4)
    spectrum = (rng.normal(size=(size, size)) + 1j * rng.normal(size=(size, size))) / f ** (beta / 2)
    spectrum[0, 0] = 0
    tex = np.real(np.fft.ifft2(spectrum))
    lo, hi = np.percentile(tex, [1, 99])
    img = 0.5 + 0.35 * (tex - (lo + hi) / 2) / max(hi - lo, 1e-12)

    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(int(rng.integers(8, 25))):
        cy, cx = rng.uniform(0, size, 2)
        ry, rx = rng.uniform(size * 0.03, size * 0.2, 2)
        level = rng.uniform(0.1, 0.9)
        alpha = rng.uniform(0.5, 1.0)
        if rng.random() < 0.5:
            inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        else:
            inside = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        img = np.where(inside, (1 - alpha) * img + alpha * (level + 0.15 * (img - 0.5)), img)

    img = gaussian_filter(img, sigma=rng.uniform(0.6, 1.0), mode="reflect")
    img = img + rng.normal(scale=rng.uniform(0.004, 0.012), size=img.shape)
    return quantize8(np.clip(img, 0.0, 1.0))


def synthetic_sources(n: int, size: int = 512, seed: int = 0) -> list[np.ndarray]:
    return [synth_raw_image(np.random.default_rng([seed, i]), size) for i in range(n)]


def load_sources(directory) -> list[tuple[str, np.ndarray]]:
    directory = Path(directory)
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    return [(p.stem, read_image(p)) for p in files]


# ---------------------------------------------------------------------------
# patch datasets


@dataclass
class PatchDataset:
    task: str
    patches: np.ndarray  # (n, P, P)
    labels: np.ndarray  # (n,) int, 1 = task transform present
    split: np.ndarray  # (n,) "train" / "test"
    records: list[dict] = field(default_factory=list)

    def subset(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        sel = self.split == split
        return self.patches[sel], self.labels[sel]


def _balanced_labels(n: int, rng: np.random.Generator) -> np.ndarray:
    labels = np.zeros(n, dtype=np.int64)
    labels[: n // 2 + (n % 2) * int(rng.integers(0, 2))] = 1
    return rng.permutation(labels)


def build_patch_dataset(sources, task: str, n: int, seed: int = 0, patch_size: int = 64,
                        allow_jpeg: bool = True, max_extra: int = 2, ranges: ParameterRanges = ParameterRanges(),
                        interpolation: str = "bilinear", test_fraction: float = 0.2,
                        source_ids: list[str] | None = None) -> PatchDataset:
    """Balanced, source-disjoint patch set for one binary task."""
    if task not in TASK_KIND and task != MANIPULATED:
        raise ParameterError(f"unknown task {task!r}")
    sources = [np.asarray(s, dtype=np.float64) for s in sources]
    if len(sources) < 2:
        raise DatasetError("at least two source images are required")
    if n < 10:
        raise DatasetError("at least 10 patches are required")
    ids = source_ids or [f"src{i:04d}" for i in range(len(sources))]

    master = np.random.default_rng([seed, 0x5EED])
    order = master.permutation(len(sources))
    n_test_src = min(max(1, int(round(test_fraction * len(sources)))), len(sources) - 1)
    test_src, train_src = order[:n_test_src], order[n_test_src:]
    n_test = int(round(test_fraction * n))
    splits = [("train", train_src, n - n_test), ("test", test_src, n_test)]

    patches, labels, split_tags, records = [], [], [], []
    index = 0
    for split, src_idx, count in splits:
        for lab in _balanced_labels(count, master):
            rng = np.random.default_rng([seed, index])
            chain_seed = int(rng.integers(0, 2**63 - 1))
            chain = random_chain(np.random.default_rng(chain_seed), task, bool(lab), allow_jpeg,
                                 max_extra, ranges, chain_seed)
            s = int(src_idx[rng.integers(0, len(src_idx))])
            img = sources[s]
            need = chain_footprint(chain, (patch_size, patch_size))[0]
            if img.shape[0] < need[0] or img.shape[1] < need[1]:
                raise DatasetError(f"source {ids[s]} ({img.shape}) is smaller than the {need} region needed")
            y = int(rng.integers(0, img.shape[0] - need[0] + 1))
            x = int(rng.integers(0, img.shape[1] - need[1] + 1))
            patch = apply_chain_cropped(img[y : y + need[0], x : x + need[1]], chain,
                                        (patch_size, patch_size), interpolation)
            patches.append(patch)
            labels.append(int(lab))
            split_tags.append(split)
            records.append({
                "schema": MANIFEST_SCHEMA,
                "index": index,
                "task": task,
                "label": bool(lab),
                "flags": chain_labels(chain),
                "chain": chain.to_list(),
                "chain_seed": chain_seed,
                "source_id": ids[s],
                "origin": [y, x],
                "split": split,
            })
            index += 1
    return PatchDataset(task, np.stack(patches), np.asarray(labels), np.asarray(split_tags), records)


def save_patch_dataset(ds: PatchDataset, out_dir) -> Path:
    """Write patches as lossless 8-bit PNG plus a JSON-lines manifest."""
    out_dir = Path(out_dir)
    (out_dir / "patches").mkdir(parents=True, exist_ok=True)
    lines = []
    for patch, rec in zip(ds.patches, ds.records):
        rel = f"patches/{ds.task}_{rec['index']:06d}.png"
        write_png(out_dir / rel, patch)
        lines.append(json.dumps({**rec, "path": rel}, sort_keys=True))
    manifest = out_dir / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def load_patch_dataset(out_dir) -> PatchDataset:
    out_dir = Path(out_dir)
    manifest = out_dir / "manifest.jsonl"
    if not manifest.exists():
        raise DatasetError(f"no manifest at {manifest}")
    records = [json.loads(line) for line in manifest.read_text().splitlines() if line.strip()]
    if not records:
        raise DatasetError("manifest is empty")
    bad = [r for r in records if r.get("schema") != MANIFEST_SCHEMA]
    if bad:
        raise DatasetError(f"unsupported manifest schema {bad[0].get('schema')}")
    patches = np.stack([read_image(out_dir / r["path"]) for r in records])
    return PatchDataset(records[0]["task"], patches, np.array([int(r["label"]) for r in records]),
                        np.array([r["split"] for r in records]), records)


# ---------------------------------------------------------------------------
# splices


def splice_forgery(base, donor, chain: TransformChain, region: tuple[int, int, int, int],
                   donor_origin: tuple[int, int] | None = None, jpeg_quality: int | None = None,
                   interpolation: str = "bilinear") -> tuple[np.ndarray, np.ndarray]:
    """Paste a transformed donor window into ``base`` at ``region = (y, x, h, w)``.

    The donor window starting at ``donor_origin`` (default: donor center) is
    sized so that after the chain it exactly covers the region. Returns the
    forged image and its ground-truth mask.
    """
    base = np.asarray(base, dtype=np.float64)
    donor = np.asarray(donor, dtype=np.float64)
    y, x, h, w = region
    if h < 1 or w < 1 or y < 0 or x < 0 or y + h > base.shape[0] or x + w > base.shape[1]:
        raise ParameterError(f"region {region} does not fit in base {base.shape}")
    need = chain_footprint(chain, (h, w))[0]
    if need[0] > donor.shape[0] or need[1] > donor.shape[1]:
        raise ParameterError(f"donor {donor.shape} too small for a {need} window")
    if donor_origin is None:
        dy, dx = (donor.shape[0] - need[0]) // 2, (donor.shape[1] - need[1]) // 2
    else:
        dy, dx = donor_origin
        if dy < 0 or dx < 0 or dy + need[0] > donor.shape[0] or dx + need[1] > donor.shape[1]:
            raise ParameterError("donor window leaves the donor image")
    window = donor[dy : dy + need[0], dx : dx + need[1]]
    pasted = apply_chain_cropped(window, chain, (h, w), interpolation) if chain.steps else window
    out = base.copy()
    out[y : y + h, x : x + w] = pasted
    mask = np.zeros(base.shape, dtype=bool)
    mask[y : y + h, x : x + w] = True
    if jpeg_quality is not None:
        out = jpeg_roundtrip(out, jpeg_quality)
    return out, mask


# ---------------------------------------------------------------------------
# external ground truth


class GroundTruthIOError(DatasetError, OSError):
    pass


def load_ground_truth(directory) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """Image / mask pairs named ``<name>.<ext>`` and ``<name>_mask.png``."""
    directory = Path(directory)
    if not directory.is_dir():
        raise GroundTruthIOError(f"{directory} is not a directory")
    pairs, offenders = [], []
    for img_path in sorted(directory.iterdir()):
        if img_path.suffix.lower() not in IMAGE_SUFFIXES or img_path.stem.endswith("_mask"):
            continue
        mask_path = directory / f"{img_path.stem}_mask.png"
        if not mask_path.exists():
            continue
        try:
            img = read_image(img_path)
            mask = read_image(mask_path) > 0.5
        except OSError:
            offenders.append(str(img_path.name))
            continue
        if img.shape != mask.shape:
            warnings.warn(f"skipping {img_path.name}: mask shape {mask.shape} != image shape {img.shape}")
            continue
        pairs.append((img_path.stem, img, mask))
    if offenders:
        raise GroundTruthIOError(f"unreadable files: {', '.join(offenders)}")
    return pairs
