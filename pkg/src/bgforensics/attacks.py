"""Post-processing / laundering operations applied to frames before feature extraction.

All windowed filters replicate borders. Every operation returns a new
RasterImage and is deterministic given its parameters (noise included,
through its seed).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import raster
from .errors import (
    AttackFailed,
    BadParams,
    BadWindow,
    NegativeSigma,
    NonPositiveGamma,
)
from .raster import RasterImage

WINDOWS = (3, 5, 7)
SHARPEN_KERNEL = np.array([[-1, -1, -1], [-1, 9, -1], [-1, -1, -1]], dtype=np.int64)

# canonical parameter sets; GAMMAS_ALT is the alternative set quoted for scenario 1
MEDIAN_WINDOWS = WINDOWS
BLUR_WINDOWS = WINDOWS
GAMMAS = (0.6, 0.9, 1.3)
GAMMAS_ALT = (0.8, 0.9, 1.2)
CLAHE_LIMITS = (2.0, 4.0)
NOISE_SIGMAS = (0.8, 2.0)
RESIZE_SCALES = (0.5, 0.8)
ZOOM_FACTORS = (1.4, 1.9)
ROTATIONS = (5, 10)
JPEG_QFS = (95, 90, 85, 80)


def _check_window(k):
    if k not in WINDOWS:
        raise BadWindow(f"window must be one of {WINDOWS}, got {k!r}")


def _windows(img: RasterImage, k: int) -> np.ndarray:
    """(H, W, 3, k, k) view of replicated-border neighbourhoods."""
    r = k // 2
    padded = np.pad(img.pixels, ((r, r), (r, r), (0, 0)), mode="edge")
    return sliding_window_view(padded, (k, k), axis=(0, 1))


def median_filter(img: RasterImage, k: int = 3) -> RasterImage:
    _check_window(k)
    win = _windows(img, k).reshape(img.height, img.width, 3, k * k)
    return RasterImage(np.median(win, axis=-1).astype(np.uint8))


def _box_sum(pixels: np.ndarray, k: int) -> np.ndarray:
    r = k // 2
    padded = np.pad(pixels.astype(np.int64), ((r, r), (r, r), (0, 0)), mode="edge")
    h, w = pixels.shape[:2]
    total = np.zeros((h, w, pixels.shape[2]), dtype=np.int64)
    for dy in range(k):
        for dx in range(k):
            total += padded[dy : dy + h, dx : dx + w]
    return total


def average_blur(img: RasterImage, k: int = 3) -> RasterImage:
    """Box mean over a k x k window, rounded half up."""
    _check_window(k)
    total = _box_sum(img.pixels, k)
    n = k * k
    return RasterImage(np.clip((2 * total + n) // (2 * n), 0, 255).astype(np.uint8))


def gamma_correct(img: RasterImage, gamma: float) -> RasterImage:
    if not gamma > 0 or not math.isfinite(gamma):
        raise NonPositiveGamma(f"gamma must be positive, got {gamma!r}")
    lut = np.floor(255.0 * (np.arange(256) / 255.0) ** gamma + 0.5).astype(np.uint8)
    return RasterImage(lut[img.pixels])


_RGB_TO_YCC = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
_YCC_TO_RGB = np.linalg.inv(_RGB_TO_YCC)
_CHROMA_SHIFT = np.array([0.0, 128.0, 128.0])


def _tile_edges(n: int, tiles: int) -> np.ndarray:
    return np.floor(np.linspace(0, n, tiles + 1) + 0.5).astype(np.int64)


def _tile_lut(values: np.ndarray, clip_limit: float) -> np.ndarray:
    hist = np.bincount(values.ravel(), minlength=256).astype(np.float64)
    if np.count_nonzero(hist) <= 1:
        # no contrast to redistribute
        return np.arange(256, dtype=np.float64)
    n = values.size
    limit = max(clip_limit * n / 256.0, 1.0)
    excess = np.maximum(hist - limit, 0.0).sum()
    hist = np.minimum(hist, limit) + excess / 256.0
    return 255.0 * np.cumsum(hist) / n


def _interp_axis(n: int, edges: np.ndarray):
    """Lower tile index and blend weight of each coordinate between tile centres."""
    centres = (edges[:-1] + edges[1:] - 1) / 2.0
    pos = np.arange(n, dtype=np.float64)
    hi = np.searchsorted(centres, pos, side="right")
    lo = np.clip(hi - 1, 0, len(centres) - 1)
    hi = np.clip(hi, 0, len(centres) - 1)
    span = centres[hi] - centres[lo]
    t = np.where(span > 0, (pos - centres[lo]) / np.where(span > 0, span, 1.0), 0.0)
    return lo, hi, np.clip(t, 0.0, 1.0)


def clahe(img: RasterImage, clip_limit: float = 2.0, tiles=(8, 8)) -> RasterImage:
    """Contrast-limited adaptive histogram equalization of BT.601 luma; chroma is kept."""
    tx, ty = int(tiles[0]), int(tiles[1])
    if not clip_limit > 0 or tx < 1 or ty < 1:
        raise BadParams(f"bad CLAHE parameters clip_limit={clip_limit}, tiles={tiles}")
    h, w = img.height, img.width
    tx, ty = min(tx, w), min(ty, h)
    ycc = img.pixels.astype(np.float64) @ _RGB_TO_YCC.T + _CHROMA_SHIFT
    luma = ycc[:, :, 0]
    lq = np.clip(np.floor(luma + 0.5), 0, 255).astype(np.int64)

    ye, xe = _tile_edges(h, ty), _tile_edges(w, tx)
    luts = np.empty((ty, tx, 256))
    for i in range(ty):
        for j in range(tx):
            luts[i, j] = _tile_lut(lq[ye[i] : ye[i + 1], xe[j] : xe[j + 1]], clip_limit)

    y0, y1, wy = _interp_axis(h, ye)
    x0, x1, wx = _interp_axis(w, xe)
    wy, wx = wy[:, None], wx[None, :]
    top = (1 - wx) * luts[y0[:, None], x0[None, :], lq] + wx * luts[y0[:, None], x1[None, :], lq]
    bot = (1 - wx) * luts[y1[:, None], x0[None, :], lq] + wx * luts[y1[:, None], x1[None, :], lq]
    mapped = (1 - wy) * top + wy * bot

    ycc[:, :, 0] = luma + (mapped - lq)
    rgb = (ycc - _CHROMA_SHIFT) @ _YCC_TO_RGB.T
    return RasterImage.from_float(rgb)


def gaussian_noise(img: RasterImage, sigma: float, seed: int = 0, salt: int | None = None) -> RasterImage:
    """Add zero-mean N(0, sigma^2) noise per sample, round, clamp."""
    if not sigma >= 0 or not math.isfinite(sigma):
        raise NegativeSigma(f"sigma must be >= 0, got {sigma!r}")
    if sigma == 0:
        return img
    rng = np.random.default_rng(seed if salt is None else [seed, salt])
    noisy = img.pixels.astype(np.float64) + rng.normal(0.0, sigma, img.pixels.shape)
    return RasterImage.from_float(noisy)


def resize_attack(img: RasterImage, scale: float) -> RasterImage:
    if not 0 < scale <= 1:
        raise BadParams(f"resize scale must lie in (0, 1], got {scale!r}")
    return raster.resample_bicubic(img, scale, scale)


def zoom(img: RasterImage, factor: float) -> RasterImage:
    """Bicubic upscale, then centre-crop back to the original size."""
    if not factor >= 1 or not math.isfinite(factor):
        raise BadParams(f"zoom factor must be >= 1, got {factor!r}")
    if factor == 1:
        return img
    big = raster.resample_bicubic(img, factor, factor)
    top = (big.height - img.height) // 2
    left = (big.width - img.width) // 2
    return RasterImage(big.pixels[top : top + img.height, left : left + img.width])


def rotate_attack(img: RasterImage, degrees: float) -> RasterImage:
    return raster.rotate_bicubic(img, degrees)


def sharpen(img: RasterImage) -> RasterImage:
    padded = np.pad(img.pixels.astype(np.int64), ((1, 1), (1, 1), (0, 0)), mode="edge")
    h, w = img.height, img.width
    out = np.zeros((h, w, 3), dtype=np.int64)
    for dy in range(3):
        for dx in range(3):
            out += SHARPEN_KERNEL[dy, dx] * padded[dy : dy + h, dx : dx + w]
    return RasterImage(np.clip(out, 0, 255).astype(np.uint8))


def blur_then_sharpen(img: RasterImage) -> RasterImage:
    return sharpen(average_blur(img, 3))


# -- declarative specs ------------------------------------------------------

_PARAMS = {
    "median": {"k": 3},
    "blur": {"k": 3},
    "gamma": {"gamma": 1.0},
    "clahe": {"clip_limit": 2.0, "tiles": [8, 8]},
    "gauss_noise": {"sigma": 0.0, "seed": 0},
    "resize": {"scale": 1.0},
    "zoom": {"factor": 1.0},
    "rotate": {"degrees": 0.0},
    "blur_sharpen": {},
    "jpeg": {"qf": 90},
}
KINDS = tuple(_PARAMS)


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _PARAMS:
            raise BadParams(f"unknown attack kind {self.kind!r}; expected one of {KINDS}")
        unknown = set(self.params) - set(_PARAMS[self.kind])
        if unknown:
            raise BadParams(f"{self.kind}: unknown parameters {sorted(unknown)}")
        merged = {**_PARAMS[self.kind], **self.params}
        object.__setattr__(self, "params", merged)
        self._validate()

    def _validate(self):
        p = self.params
        if self.kind in ("median", "blur"):
            _check_window(p["k"])
        elif self.kind == "gamma" and not p["gamma"] > 0:
            raise NonPositiveGamma(f"gamma must be positive, got {p['gamma']!r}")
        elif self.kind == "clahe" and (not p["clip_limit"] > 0 or len(p["tiles"]) != 2 or min(p["tiles"]) < 1):
            raise BadParams(f"bad CLAHE parameters {p}")
        elif self.kind == "gauss_noise" and not p["sigma"] >= 0:
            raise NegativeSigma(f"sigma must be >= 0, got {p['sigma']!r}")
        elif self.kind == "resize" and not 0 < p["scale"] <= 1:
            raise BadParams(f"resize scale must lie in (0, 1], got {p['scale']!r}")
        elif self.kind == "zoom" and not p["factor"] >= 1:
            raise BadParams(f"zoom factor must be >= 1, got {p['factor']!r}")
        elif self.kind == "jpeg" and not (isinstance(p["qf"], int) and 1 <= p["qf"] <= 100):
            raise BadParams(f"jpeg qf must be an integer in [1, 100], got {p['qf']!r}")

    def apply(self, img: RasterImage, salt: int | None = None) -> RasterImage:
        p = self.params
        k = self.kind
        if k == "median":
            return median_filter(img, p["k"])
        if k == "blur":
            return average_blur(img, p["k"])
        if k == "gamma":
            return gamma_correct(img, p["gamma"])
        if k == "clahe":
            return clahe(img, p["clip_limit"], tuple(p["tiles"]))
        if k == "gauss_noise":
            return gaussian_noise(img, p["sigma"], p["seed"], salt)
        if k == "resize":
            return resize_attack(img, p["scale"])
        if k == "zoom":
            return zoom(img, p["factor"])
        if k == "rotate":
            return rotate_attack(img, p["degrees"])
        if k == "blur_sharpen":
            return blur_then_sharpen(img)
        return raster.jpeg_roundtrip(img, p["qf"])

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}

    @classmethod
    def from_dict(cls, d: dict) -> AttackSpec:
        if not isinstance(d, dict) or "kind" not in d:
            raise BadParams(f"attack spec must be an object with a 'kind' field, got {d!r}")
        params = {key: val for key, val in d.items() if key != "kind"}
        return cls(d["kind"], params)

    def describe(self) -> str:
        args = ",".join(f"{key}={_fmt(val)}" for key, val in self.params.items() if key != "seed")
        return f"{self.kind}({args})" if args else self.kind


def _fmt(val):
    if isinstance(val, (list, tuple)):
        return "x".join(str(v) for v in val)
    return f"{val:g}" if isinstance(val, float) else str(val)


@dataclass(frozen=True)
class AttackChain:
    steps: tuple

    def __post_init__(self):
        steps = tuple(self.steps)
        if not steps:
            raise BadParams("an attack chain needs at least one step")
        object.__setattr__(self, "steps", steps)

    def describe(self) -> str:
        return "+".join(step.describe() for step in self.steps)

    def to_json(self) -> list:
        return [step.to_dict() for step in self.steps]

    @classmethod
    def parse(cls, obj) -> AttackChain:
        """Accept a JSON string, a single spec object or a list of spec objects."""
        if isinstance(obj, str):
            try:
                obj = json.loads(obj)
            except json.JSONDecodeError as exc:
                raise BadParams(f"attack spec is not valid JSON: {exc}") from exc
        if isinstance(obj, AttackChain):
            return obj
        if isinstance(obj, AttackSpec):
            return cls((obj,))
        if isinstance(obj, dict):
            obj = [obj]
        if not isinstance(obj, list):
            raise BadParams(f"attack chain must be an object or an array, got {obj!r}")
        return cls(tuple(s if isinstance(s, AttackSpec) else AttackSpec.from_dict(s) for s in obj))


def apply_chain(img: RasterImage, chain, salt: int | None = None) -> RasterImage:
    """Apply steps left to right; `salt` varies noise realisations per frame."""
    chain = AttackChain.parse(chain) if not isinstance(chain, AttackChain) else chain
    for i, step in enumerate(chain.steps):
        try:
            img = step.apply(img, salt)
        except Exception as exc:
            raise AttackFailed(i, step.kind, exc) from exc
    return img
