"""Spatial and cross-band co-occurrence matrices and the six-plane CNN input.

Offsets are ``(dx, dy)``: column displacement first, then row displacement.
Pairs whose displaced sample falls outside the plane are skipped.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, IoFailure, OffsetTooLarge, ShapeMismatch
from .raster import RasterImage

LEVELS = 256
SPATIAL_OFFSET = (1, 1)
CROSSBAND_OFFSET = (0, 0)
PLANE_NAMES = ("R", "G", "B", "R-G", "R-B", "G-B")
CROSS_PAIRS = ((0, 1), (0, 2), (1, 2))

_MAGIC = b"CMT6"


@dataclass(frozen=True)
class CoMat:
    """A 256x256 co-occurrence grid; ``bins[x, y]`` counts first value x, displaced value y."""

    bins: np.ndarray
    kind: str
    offset: tuple

    @property
    def total(self):
        return self.bins.sum()

    def normalized(self) -> CoMat:
        total = self.bins.sum()
        bins = self.bins.astype(np.float64)
        if total > 0:
            bins = bins / total
        return CoMat(bins, self.kind, self.offset)


@dataclass(frozen=True)
class CoMatTensor:
    """Six normalized co-mats stacked channel-last, shape (256, 256, 6),
    in the order R, G, B, R-G, R-B, G-B."""

    data: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        if self.data.shape != (LEVELS, LEVELS, 6):
            raise ShapeMismatch(f"co-mat tensor must be 256x256x6, got {self.data.shape}")

    def plane(self, index: int) -> np.ndarray:
        return self.data[:, :, index]


def _paired_views(a: np.ndarray, b: np.ndarray, offset):
    dx, dy = int(offset[0]), int(offset[1])
    h, w = a.shape
    if abs(dx) >= w or abs(dy) >= h:
        raise OffsetTooLarge(f"offset {offset} does not fit a {w}x{h} plane")
    rows = slice(max(0, -dy), h - max(0, dy))
    cols = slice(max(0, -dx), w - max(0, dx))
    rows_d = slice(max(0, dy), h - max(0, -dy))
    cols_d = slice(max(0, dx), w - max(0, -dx))
    return a[rows, cols], b[rows_d, cols_d]


def _count(first: np.ndarray, second: np.ndarray) -> np.ndarray:
    codes = first.astype(np.int64).ravel() * LEVELS + second.astype(np.int64).ravel()
    return np.bincount(codes, minlength=LEVELS * LEVELS).reshape(LEVELS, LEVELS)


def _check_plane(plane) -> np.ndarray:
    plane = np.asarray(plane)
    if plane.ndim != 2 or plane.size == 0:
        raise ShapeMismatch(f"expected a non-empty 2-D plane, got shape {plane.shape}")
    return plane


def spatial_comat(plane, offset=SPATIAL_OFFSET) -> CoMat:
    """Raw counts of (plane[p], plane[p + offset]) over in-range positions."""
    plane = _check_plane(plane)
    first, second = _paired_views(plane, plane, offset)
    return CoMat(_count(first, second), "spatial", tuple(offset))


def crossband_comat(plane_a, plane_b, offset=CROSSBAND_OFFSET) -> CoMat:
    """Raw counts of (plane_a[p], plane_b[p + offset]) over in-range positions."""
    plane_a, plane_b = _check_plane(plane_a), _check_plane(plane_b)
    if plane_a.shape != plane_b.shape:
        raise DimensionMismatch(f"plane shapes differ: {plane_a.shape} vs {plane_b.shape}")
    first, second = _paired_views(plane_a, plane_b, offset)
    return CoMat(_count(first, second), "crossband", tuple(offset))


def six_comat_tensor(img: RasterImage, source_id: str = "") -> CoMatTensor:
    planes = [spatial_comat(img.plane(c), SPATIAL_OFFSET) for c in range(3)]
    planes += [crossband_comat(img.plane(a), img.plane(b), CROSSBAND_OFFSET) for a, b in CROSS_PAIRS]
    data = np.stack([p.normalized().bins for p in planes], axis=-1)
    return CoMatTensor(data, source_id)


def save_tensor(tensor: CoMatTensor, path) -> None:
    """Write the CMT6 binary (float32 LE, plane-major) plus a ``.json`` sidecar."""
    path = Path(path)
    header = _MAGIC + struct.pack("<III", LEVELS, LEVELS, 6)
    payload = np.ascontiguousarray(np.moveaxis(tensor.data, -1, 0), dtype="<f4").tobytes()
    try:
        path.write_bytes(header + payload)
        path.with_name(path.name + ".json").write_text(
            json.dumps({"source_id": tensor.source_id}, sort_keys=True) + "\n"
        )
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_tensor(path) -> CoMatTensor:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != _MAGIC:
        raise ShapeMismatch(f"{path}: not a CMT6 tensor file")
    w, h, n = struct.unpack("<III", raw[4:16])
    if (w, h, n) != (LEVELS, LEVELS, 6) or len(raw) != 16 + 4 * w * h * n:
        raise ShapeMismatch(f"{path}: bad CMT6 header or length")
    planes = np.frombuffer(raw, dtype="<f4", offset=16).reshape(n, h, w)
    sidecar = path.with_name(path.name + ".json")
    source_id = json.loads(sidecar.read_text())["source_id"] if sidecar.exists() else ""
    return CoMatTensor(np.moveaxis(planes, 0, -1).astype(np.float64), source_id)
