"""Image representation, I/O and the geometric/compression transforms.

Images are plain 2-D ``float64`` numpy arrays of shape ``(height, width)``
with samples in ``[0, 1]``. Every function here is pure: inputs are never
modified in place.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image

from .errors import (
    CompressionError,
    DimensionError,
    InvalidTransformError,
    ParameterError,
    UnsupportedFormatError,
)

LAPLACIAN = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])
IDENTITY_KERNEL = np.array([[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]])
BT601 = np.array([0.299, 0.587, 0.114])

# coordinates closer than this to an integer are snapped, so axis-aligned
# warps (identity, 90 degree rotations) are exact permutations
_SNAP = 1e-9


def as_image(data) -> np.ndarray:
    """Validate and convert ``data`` into a 2-D float64 image in [0, 1]."""
    img = np.asarray(data, dtype=np.float64)
    if img.ndim != 2:
        raise DimensionError(f"expected a 2-D image, got shape {img.shape}")
    if img.size == 0:
        raise DimensionError("image is empty")
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise ParameterError("image samples must be finite and within [0, 1]")
    return img


def to_grayscale(rgb) -> np.ndarray:
    """Luminance from an ``(H, W)``, ``(H, W, 1)`` or ``(H, W, 3)`` raster in [0, 1]."""
    arr = np.asarray(rgb, dtype=np.float64)
    if arr.ndim == 2:
        return np.clip(arr, 0.0, 1.0)
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise UnsupportedFormatError(f"unsupported channel layout {arr.shape}")
    if arr.shape[2] == 1:
        return np.clip(arr[:, :, 0], 0.0, 1.0)
    return np.clip(arr @ BT601, 0.0, 1.0)


def _require_min_size(img: np.ndarray, size: int) -> None:
    if img.ndim != 2 or img.shape[0] < size or img.shape[1] < size:
        raise DimensionError(f"image of shape {img.shape} is smaller than {size}x{size}")


def _neighborhoods(img: np.ndarray) -> np.ndarray:
    """Stack of the 9 mirror-padded 3x3 shifts, shape ``(3, 3, H, W)``."""
    h, w = img.shape
    padded = np.pad(img, 1, mode="reflect")
    out = np.empty((3, 3, h, w))
    for dy in range(3):
        for dx in range(3):
            out[dy, dx] = padded[dy : dy + h, dx : dx + w]
    return out


def conv3x3(img, kernel) -> np.ndarray:
    """Apply a 3x3 kernel with mirror-reflected borders.

    ``kernel[1 + dy, 1 + dx]`` weights the neighbor at row offset ``dy`` and
    column offset ``dx`` (correlation orientation; identical to convolution for
    the symmetric kernels used here). The output is not clamped.
    """
    img = np.asarray(img, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.shape != (3, 3):
        raise DimensionError(f"kernel must be 3x3, got {kernel.shape}")
    _require_min_size(img, 3)
    return np.einsum("ij,ijhw->hw", kernel, _neighborhoods(img))


def laplacian_magnitude_sqrt(img) -> np.ndarray:
    return np.sqrt(np.abs(conv3x3(img, LAPLACIAN)))


def median_residual(img) -> np.ndarray:
    """``img - median3x3(img)``, the alternative linear-predictor residual."""
    img = np.asarray(img, dtype=np.float64)
    _require_min_size(img, 3)
    med = np.median(_neighborhoods(img).reshape(9, *img.shape), axis=0)
    return img - med


# ---------------------------------------------------------------------------
# geometric warps


def _mirror_index(idx: np.ndarray, n: int) -> np.ndarray:
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def _keys_weights(t: np.ndarray) -> list[np.ndarray]:
    """Cubic convolution (a = -0.5) weights for taps at offsets -1, 0, 1, 2."""
    a = -0.5

    def near(x):
        return (a + 2) * x**3 - (a + 3) * x**2 + 1

    def far(x):
        return a * x**3 - 5 * a * x**2 + 8 * a * x - 4 * a

    return [far(1 + t), near(t), near(1 - t), far(2 - t)]


def sample(img: np.ndarray, ys: np.ndarray, xs: np.ndarray, interpolation: str = "bilinear",
           mode: str = "mirror") -> np.ndarray:
    """Interpolate ``img`` at fractional coordinates.

    ``mode="mirror"`` reflects out-of-domain taps back into the image,
    ``mode="zero"`` treats everything outside the image as 0.
    """
    h, w = img.shape
    ys = np.where(np.abs(ys - np.round(ys)) < _SNAP, np.round(ys), ys)
    xs = np.where(np.abs(xs - np.round(xs)) < _SNAP, np.round(xs), xs)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    ty = ys - y0
    tx = xs - x0
    if interpolation == "bilinear":
        offsets = (0, 1)
        wy = [1.0 - ty, ty]
        wx = [1.0 - tx, tx]
    elif interpolation == "bicubic":
        offsets = (-1, 0, 1, 2)
        wy = _keys_weights(ty)
        wx = _keys_weights(tx)
    else:
        raise ParameterError(f"unknown interpolation {interpolation!r}")

    out = np.zeros(np.broadcast(ys, xs).shape)
    for i, oy in enumerate(offsets):
        yy = y0 + oy
        for j, ox in enumerate(offsets):
            xx = x0 + ox
            weight = wy[i] * wx[j]
            if mode == "mirror":
                vals = img[_mirror_index(yy, h), _mirror_index(xx, w)]
            elif mode == "zero":
                inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
                vals = np.where(inside, img[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)], 0.0)
            else:
                raise ParameterError(f"unknown border mode {mode!r}")
            out += weight * vals
    return out


def affine_resample(img, matrix, offset=(0.0, 0.0), interpolation: str = "bilinear",
                    output_shape: tuple[int, int] | None = None, mode: str = "mirror") -> np.ndarray:
    """Warp ``img`` by the forward map ``p' = matrix @ p + offset``.

    Points are ``(x, y)`` pixel coordinates with ``y`` pointing down, pixel
    centers at integers. When ``output_shape`` is None the canvas is the
    bounding box of the transformed image footprint (translation then has no
    effect); otherwise the canvas is ``output_shape`` and ``offset`` applies.
    Output values are resampled by inverse mapping.
    """
    img = np.asarray(img, dtype=np.float64)
    a = np.asarray(matrix, dtype=np.float64)
    if a.shape != (2, 2):
        raise InvalidTransformError(f"matrix must be 2x2, got {a.shape}")
    det = np.linalg.det(a)
    if not np.isfinite(det) or abs(det) < 1e-12:
        raise InvalidTransformError("affine matrix is singular")
    inv = np.linalg.inv(a)
    t = np.asarray(offset, dtype=np.float64)
    h, w = img.shape

    if output_shape is None:
        corners = np.array([[-0.5, -0.5], [w - 0.5, -0.5], [-0.5, h - 0.5], [w - 0.5, h - 0.5]]).T
        mapped = a @ corners
        lo = mapped.min(axis=1)
        hi = mapped.max(axis=1)
        extent = hi - lo
        # tolerate roundoff in the extent so exact sizes are not bumped by one
        out_w = max(1, int(math.ceil(extent[0] - 1e-6)))
        out_h = max(1, int(math.ceil(extent[1] - 1e-6)))
        # center the canvas on the footprint
        start = (lo + hi) / 2 - np.array([out_w, out_h]) / 2 + 0.5
        t = np.zeros(2)
    else:
        out_h, out_w = output_shape
        start = np.zeros(2)

    gx, gy = np.meshgrid(start[0] + np.arange(out_w), start[1] + np.arange(out_h))
    px = gx - t[0]
    py = gy - t[1]
    sx = inv[0, 0] * px + inv[0, 1] * py
    sy = inv[1, 0] * px + inv[1, 1] * py
    out = sample(img, sy, sx, interpolation, mode)
    if interpolation == "bicubic":
        out = np.clip(out, 0.0, 1.0) if mode == "mirror" else out
    return out


def rotate_matrix(degrees_cw: float) -> np.ndarray:
    """Clockwise (as displayed, y down) rotation matrix."""
    th = math.radians(degrees_cw)
    c, s = math.cos(th), math.sin(th)
    return np.array([[c, -s], [s, c]])


# ---------------------------------------------------------------------------
# transform specs


class TransformKind(str, Enum):
    UPSCALE = "UpScale"
    DOWNSCALE = "DownScale"
    ROTATE_CW = "RotateCW"
    ROTATE_CCW = "RotateCCW"
    SHEAR = "Shear"
    JPEG = "JpegCompress"


@dataclass(frozen=True)
class TransformSpec:
    kind: TransformKind
    parameter: float

    def __post_init__(self):
        kind = TransformKind(self.kind)
        object.__setattr__(self, "kind", kind)
        p = self.parameter
        ok = {
            TransformKind.UPSCALE: p > 1,
            TransformKind.DOWNSCALE: 0 < p < 1,
            TransformKind.ROTATE_CW: p > 0,
            TransformKind.ROTATE_CCW: p > 0,
            TransformKind.SHEAR: p != 0,
            TransformKind.JPEG: float(p).is_integer() and 1 <= p <= 100,
        }[kind]
        if not ok:
            raise InvalidTransformError(f"parameter {p} is invalid for {kind.value}")

    def matrix(self) -> np.ndarray:
        k, p = self.kind, self.parameter
        if k in (TransformKind.UPSCALE, TransformKind.DOWNSCALE):
            return np.array([[p, 0.0], [0.0, p]])
        if k is TransformKind.ROTATE_CW:
            return rotate_matrix(p)
        if k is TransformKind.ROTATE_CCW:
            return rotate_matrix(-p)
        if k is TransformKind.SHEAR:
            return np.array([[1.0, p], [0.0, 1.0]])
        raise InvalidTransformError("JPEG compression has no affine matrix")

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "parameter": self.parameter}

    @classmethod
    def from_dict(cls, d: dict) -> "TransformSpec":
        return cls(TransformKind(d["kind"]), d["parameter"])


def apply_transform(img, spec: TransformSpec, interpolation: str = "bilinear") -> np.ndarray:
    if spec.kind is TransformKind.JPEG:
        return jpeg_roundtrip(img, int(spec.parameter))
    return affine_resample(img, spec.matrix(), interpolation=interpolation)


# ---------------------------------------------------------------------------
# compression and I/O


def quantize8(img) -> np.ndarray:
    """Round to the 8-bit grid, as when an image is stored."""
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def _to_uint8(img) -> np.ndarray:
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def jpeg_roundtrip(img, quality: int) -> np.ndarray:
    """Encode as baseline JPEG at ``quality`` and decode back."""
    if isinstance(quality, bool) or int(quality) != quality or not 1 <= quality <= 100:
        raise ParameterError(f"JPEG quality must be an integer in [1, 100], got {quality}")
    buf = io.BytesIO()
    try:
        Image.fromarray(_to_uint8(img), mode="L").save(buf, format="JPEG", quality=int(quality))
        buf.seek(0)
        decoded = np.asarray(Image.open(buf).convert("L"), dtype=np.float64)
    except OSError as exc:
        raise CompressionError(str(exc)) from exc
    return decoded / 255.0


def read_image(path) -> np.ndarray:
    path = Path(path)
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
            return np.clip(arr, 0.0, 1.0)
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return to_grayscale(arr)


def write_png(path, img) -> None:
    Image.fromarray(_to_uint8(img), mode="L").save(Path(path), format="PNG")


def write_jpeg(path, img, quality: int = 95) -> None:
    Image.fromarray(_to_uint8(img), mode="L").save(Path(path), format="JPEG", quality=int(quality))


# ---------------------------------------------------------------------------
# patches


@dataclass(frozen=True)
class PatchGrid:
    patch_size: int
    stride: int
    rows: int
    cols: int

    @classmethod
    def for_image(cls, height: int, width: int, patch_size: int = 64, stride: int = 8) -> "PatchGrid":
        if patch_size < 1 or stride < 1:
            raise ParameterError("patch size and stride must be positive")
        if height < patch_size or width < patch_size:
            raise DimensionError(f"image {height}x{width} is smaller than patch {patch_size}")
        return cls(patch_size, stride, (height - patch_size) // stride + 1,
                   (width - patch_size) // stride + 1)

    def origin(self, r: int, c: int) -> tuple[int, int]:
        return r * self.stride, c * self.stride

    def cell_of(self, y: int, x: int) -> tuple[int, int]:
        """Grid cell whose patch starts at pixel ``(y, x)``."""
        if y % self.stride or x % self.stride:
            raise ParameterError(f"({y}, {x}) is not a patch origin")
        return y // self.stride, x // self.stride

    @property
    def origins(self) -> np.ndarray:
        rr, cc = np.meshgrid(np.arange(self.rows), np.arange(self.cols), indexing="ij")
        return np.stack([rr.ravel() * self.stride, cc.ravel() * self.stride], axis=1)

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Pixel coordinates of patch centers along rows and along columns."""
        half = (self.patch_size - 1) / 2
        return (np.arange(self.rows) * self.stride + half,
                np.arange(self.cols) * self.stride + half)


def extract_patches(img, size: int = 64, stride: int = 8) -> tuple[PatchGrid, np.ndarray]:
    """All ``size x size`` patches at the given stride, row-major, as ``(n, size, size)``."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise DimensionError(f"expected a 2-D image, got shape {img.shape}")
    grid = PatchGrid.for_image(img.shape[0], img.shape[1], size, stride)
    windows = sliding_window_view(img, (size, size))[::stride, ::stride]
    windows = windows[: grid.rows, : grid.cols]
    return grid, np.ascontiguousarray(windows.reshape(-1, size, size))
