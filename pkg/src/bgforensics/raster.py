"""8-bit RGB rasters: file I/O, JPEG round trips and bicubic resampling."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    CorruptStream,
    IoFailure,
    NonPositiveScale,
    QualityOutOfRange,
    UnsupportedFormat,
)

_READABLE = {"PNG", "JPEG", "PPM"}


@dataclass(frozen=True, eq=False)
class RasterImage:
    """An RGB image held as a (height, width, 3) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) pixels, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image must be non-empty")
        if px.dtype != np.uint8:
            if np.any(px < 0) or np.any(px > 255):
                raise ValueError("intensities must lie in [0, 255]")
            px = px.astype(np.uint8)
        if px.flags.writeable and (px is self.pixels or np.shares_memory(px, self.pixels)):
            # never freeze the caller's buffer
            px = px.copy()
        px = np.ascontiguousarray(px)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def plane(self, channel: int) -> np.ndarray:
        """Channel plane 0=R, 1=G, 2=B as a (height, width) uint8 view."""
        return self.pixels[:, :, channel]

    @classmethod
    def from_planes(cls, r, g, b) -> RasterImage:
        return cls(np.stack([np.asarray(r), np.asarray(g), np.asarray(b)], axis=-1))

    @classmethod
    def from_float(cls, values: np.ndarray) -> RasterImage:
        """Round half up and clamp a float array into a raster."""
        return cls(np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8))

    def __eq__(self, other):
        if not isinstance(other, RasterImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    def __repr__(self):
        return f"RasterImage(width={self.width}, height={self.height})"


def _to_rgb(im: Image.Image) -> np.ndarray:
    if im.mode in ("L", "LA"):
        gray = np.asarray(im.convert("L"))
        return np.repeat(gray[:, :, None], 3, axis=2)
    if im.mode in ("RGB", "RGBA", "P", "PA", "1"):
        return np.asarray(im.convert("RGB"))
    raise UnsupportedFormat(f"unsupported pixel mode {im.mode!r}")


def _decode(source, name: str) -> RasterImage:
    try:
        im = Image.open(source)
    except UnidentifiedImageError as exc:
        raise UnsupportedFormat(f"{name}: not a PNG, JPEG or PPM image") from exc
    except (OSError, SyntaxError, ValueError) as exc:
        # recognised signature but the header itself is cut short or malformed
        raise CorruptStream(f"{name}: {exc}") from exc
    with im:
        if im.format not in _READABLE:
            raise UnsupportedFormat(f"{name}: format {im.format} not supported")
        try:
            im.load()
        except (OSError, SyntaxError, ValueError) as exc:
            raise CorruptStream(f"{name}: {exc}") from exc
        return RasterImage(_to_rgb(im))


def load_image(path) -> RasterImage:
    """Decode a PNG, PPM or baseline JPEG file into an RGB raster.

    Grayscale files are replicated into three identical planes.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    with open(path, "rb") as fh:
        data = fh.read()
    return _decode(io.BytesIO(data), str(path))


def save_image(img: RasterImage, path, format: str = "png") -> None:
    """Write a lossless PNG or binary PPM (P6, maxval 255)."""
    fmt = format.lower()
    if fmt not in ("png", "ppm"):
        raise UnsupportedFormat(f"cannot write format {format!r}")
    buf = io.BytesIO()
    Image.fromarray(img.pixels, "RGB").save(buf, "PNG" if fmt == "png" else "PPM")
    try:
        with open(path, "wb") as fh:
            fh.write(buf.getvalue())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def jpeg_roundtrip(img: RasterImage, qf: int) -> RasterImage:
    """Encode with baseline JPEG at quality `qf` (libjpeg scaling of the Annex K tables), then decode."""
    if isinstance(qf, bool) or not isinstance(qf, (int, np.integer)) or not 1 <= qf <= 100:
        raise QualityOutOfRange(f"quality factor must be an integer in [1, 100], got {qf!r}")
    buf = io.BytesIO()
    Image.fromarray(img.pixels, "RGB").save(buf, "JPEG", quality=int(qf))
    buf.seek(0)
    return _decode(buf, "<jpeg>")


def catmull_rom(t: np.ndarray) -> np.ndarray:
    """Cubic convolution kernel with a = -0.5."""
    a = -0.5
    t = np.abs(t)
    t2 = t * t
    t3 = t2 * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


def _taps(src: np.ndarray, size: int):
    """Four clamped tap indices and their weights for source coordinates `src`."""
    base = np.floor(src).astype(np.int64)
    frac = src - base
    offsets = np.arange(-1, 3)
    idx = np.clip(base[:, None] + offsets[None, :], 0, size - 1)
    weights = catmull_rom(frac[:, None] - offsets[None, :])
    return idx, weights


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def resample_array(values: np.ndarray, out_w: int, out_h: int, scale_x: float, scale_y: float) -> np.ndarray:
    """Catmull-Rom resampling of a float (H, W, C) array; no rounding or clamping."""
    h, w = values.shape[:2]
    xs = (np.arange(out_w) + 0.5) / scale_x - 0.5
    ix, wx = _taps(xs, w)
    tmp = np.einsum("hxkc,xk->hxc", values[:, ix, :], wx)
    ys = (np.arange(out_h) + 0.5) / scale_y - 0.5
    iy, wy = _taps(ys, h)
    return np.einsum("ykxc,yk->yxc", tmp[iy, :, :], wy)


def resample_bicubic(img: RasterImage, scale_x: float, scale_y: float) -> RasterImage:
    """Rescale with separable Catmull-Rom interpolation and replicated borders.

    Output pixel centres map back to source coordinates as
    ``(dst + 0.5) / scale - 0.5``.
    """
    if not (scale_x > 0 and scale_y > 0) or not (math.isfinite(scale_x) and math.isfinite(scale_y)):
        raise NonPositiveScale(f"scales must be positive, got ({scale_x}, {scale_y})")
    if scale_x == 1 and scale_y == 1:
        return img
    out_w = max(1, _round_half_up(img.width * scale_x))
    out_h = max(1, _round_half_up(img.height * scale_y))
    out = resample_array(img.pixels.astype(np.float64), out_w, out_h, scale_x, scale_y)
    return RasterImage.from_float(out)


def rotate_bicubic(img: RasterImage, degrees: float) -> RasterImage:
    """Rotate counter-clockwise (as displayed) about the image centre.

    The canvas keeps its size. Output pixels whose source position falls
    outside the source footprint are black.
    """
    if not math.isfinite(degrees):
        raise ValueError(f"angle must be finite, got {degrees}")
    if degrees % 360 == 0:
        return img
    h, w = img.height, img.width
    theta = math.radians(degrees)
    c, s = math.cos(theta), math.sin(theta)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    sx = cx + c * dx - s * dy
    sy = cy + s * dx + c * dy
    inside = (sx >= -0.5) & (sx <= w - 0.5) & (sy >= -0.5) & (sy <= h - 0.5)

    bx = np.floor(sx).astype(np.int64)
    by = np.floor(sy).astype(np.int64)
    fx = sx - bx
    fy = sy - by
    src = img.pixels.astype(np.float64)
    out = np.zeros((h, w, 3))
    for m in range(-1, 3):
        wy = catmull_rom(fy - m)
        iy = np.clip(by + m, 0, h - 1)
        for n in range(-1, 3):
            wgt = (wy * catmull_rom(fx - n))[:, :, None]
            ix = np.clip(bx + n, 0, w - 1)
            out += wgt * src[iy, ix]
    out[~inside] = 0.0
    return RasterImage.from_float(out)
