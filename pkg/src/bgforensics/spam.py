"""SPAM686 and CRSPAM1372 residual features.

Residuals follow ``r(p) = I(p) - I(p + step)``. Along each direction the
truncated residuals form a second-order Markov chain; its transition
tensor ``M[u, v, w] = P(r[k+2]=w | r[k+1]=v, r[k]=u)`` is flattened as
``(u+T)*49 + (v+T)*7 + (w+T)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PlaneTooSmall
from .raster import RasterImage

T = 3
SIDE = 2 * T + 1
CELLS = SIDE**3  # 343

# (row step, column step); rows grow downwards
DIRECTIONS = {
    "right": (0, 1),
    "left": (0, -1),
    "down": (1, 0),
    "up": (-1, 0),
    "down_right": (1, 1),
    "up_left": (-1, -1),
    "up_right": (-1, 1),
    "down_left": (1, -1),
}
AXIAL = ("right", "left", "down", "up")
DIAGONAL = ("down_right", "up_left", "up_right", "down_left")


@dataclass(frozen=True)
class ResidualPlane:
    """Residuals on the sub-grid where ``p + step`` is in range.

    ``origin`` is the (row, col) of ``values[0, 0]`` in the source plane.
    """

    values: np.ndarray
    direction: str
    origin: tuple


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    scheme: str

    def __len__(self):
        return len(self.values)


def residual(plane, direction: str) -> ResidualPlane:
    plane = np.asarray(plane, dtype=np.int64)
    dy, dx = DIRECTIONS[direction]
    h, w = plane.shape
    if (dy and h < 3) or (dx and w < 3):
        raise PlaneTooSmall(f"plane {w}x{h} too small for direction {direction}")
    rows = slice(max(0, -dy), h - max(0, dy))
    cols = slice(max(0, -dx), w - max(0, dx))
    rows_s = slice(max(0, dy), h - max(0, -dy))
    cols_s = slice(max(0, dx), w - max(0, -dx))
    values = plane[rows, cols] - plane[rows_s, cols_s]
    return ResidualPlane(values, direction, (rows.start, cols.start))


def truncate(res: ResidualPlane, t: int = T) -> ResidualPlane:
    if t < 1:
        raise ValueError("truncation threshold must be >= 1")
    return ResidualPlane(np.clip(res.values, -t, t), res.direction, res.origin)


def _chain_views(values: np.ndarray, step, length: int = 3):
    """Views ``values[p], values[p+step], ...`` over positions where all are in range."""
    dy, dx = step
    h, w = values.shape
    span_y, span_x = abs(dy) * (length - 1), abs(dx) * (length - 1)
    if span_y >= h or span_x >= w:
        return None
    views = []
    for k in range(length):
        oy = k * dy + (span_y if dy < 0 else 0)
        ox = k * dx + (span_x if dx < 0 else 0)
        views.append(values[oy : oy + h - span_y, ox : ox + w - span_x])
    return views


def transition_counts(u: np.ndarray, v: np.ndarray, w: np.ndarray) -> np.ndarray:
    codes = (u.ravel() + T) * SIDE * SIDE + (v.ravel() + T) * SIDE + (w.ravel() + T)
    return np.bincount(codes, minlength=CELLS).astype(np.float64)


def transition_tensor(counts: np.ndarray) -> np.ndarray:
    """Row-normalize triple counts into conditional probabilities; unseen (u, v) rows stay zero."""
    grid = counts.reshape(SIDE * SIDE, SIDE)
    rows = grid.sum(axis=1, keepdims=True)
    probs = np.divide(grid, rows, out=np.zeros_like(grid), where=rows > 0)
    return probs.ravel()


def direction_tensor(plane, direction: str) -> np.ndarray:
    """343-cell transition tensor of one channel along one direction."""
    res = truncate(residual(plane, direction))
    views = _chain_views(res.values, DIRECTIONS[direction])
    if views is None:
        return np.zeros(CELLS)
    return transition_tensor(transition_counts(*views))


def cross_direction_tensor(planes, direction: str) -> np.ndarray:
    """Transition tensor of the same-position triple (R, G, B) of truncated residuals."""
    r, g, b = (truncate(residual(p, direction)).values for p in planes)
    return transition_tensor(transition_counts(r, g, b))


def _check(plane_shape):
    h, w = plane_shape
    if h < 3 or w < 3:
        raise PlaneTooSmall(f"plane {w}x{h} is smaller than 3x3")


def spam686(plane) -> FeatureVector:
    plane = np.asarray(plane)
    _check(plane.shape)
    f1 = np.mean([direction_tensor(plane, d) for d in AXIAL], axis=0)
    f2 = np.mean([direction_tensor(plane, d) for d in DIAGONAL], axis=0)
    return FeatureVector(np.concatenate([f1, f2]), "spam686")


def crspam1372(img: RasterImage) -> FeatureVector:
    _check((img.height, img.width))
    planes = [img.plane(c) for c in range(3)]
    # sorting before the sum makes the channel mean bit-exact under channel permutation
    per_channel = np.sort([spam686(p).values for p in planes], axis=0).sum(axis=0) / 3
    b1 = np.mean([cross_direction_tensor(planes, d) for d in AXIAL], axis=0)
    b2 = np.mean([cross_direction_tensor(planes, d) for d in DIAGONAL], axis=0)
    return FeatureVector(np.concatenate([per_channel, b1, b2]), "crspam1372")
