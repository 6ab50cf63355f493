"""Procedural stand-in for recorded video-call frames.

Real frames are natural-looking scenes. A single luminance field
(gradients plus low-pass noise) is tinted per region, so colour channels
move together. The whole frame then passes through a simple camera
model: correlated sensor noise and a slight optical blur.

Virtual frames composite a camera-captured person over a backdrop that
never went through the camera. Half of the backdrops are rendered
graphics (flat palette shapes and per-channel gradients unrelated to each
other); the other half are photo-like scenes upscaled from a lower
resolution, so they lack sensor noise. The matte has hard edges.

Both classes get one JPEG pass at quality 92.
"""

from __future__ import annotations

import numpy as np

from ..raster import RasterImage, jpeg_roundtrip, resample_array

CAPTURE_QF = 92
PHOTO_BACKDROP_SHARE = 0.5
SENSOR_NOISE = (2.5, 4.0)  # per-pixel std range of the camera model


def smooth_field(rng: np.random.Generator, h: int, w: int, cell: int, channels: int = 1) -> np.ndarray:
    """Zero-mean, unit-scale low-pass noise: bicubic upsampling of a coarse random grid."""
    gh, gw = max(2, -(-h // cell) + 1), max(2, -(-w // cell) + 1)
    coarse = rng.standard_normal((gh, gw, channels))
    return resample_array(coarse, w, h, w / gw, h / gh)


def _linear_ramp(rng, h, w):
    theta = rng.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[0:h, 0:w]
    ramp = (np.cos(theta) * xx / w + np.sin(theta) * yy / h)
    return ramp - ramp.mean()


def _ellipse(h, w, cy, cx, ry, rx):
    yy, xx = np.mgrid[0:h, 0:w]
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def person_mask(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Head-and-shoulders silhouette at a random horizontal position."""
    cx = rng.uniform(0.3, 0.7) * w
    scale = rng.uniform(0.8, 1.1) * h
    head_cy = h - 0.62 * scale
    mask = _ellipse(h, w, head_cy, cx, 0.17 * scale, 0.13 * scale)
    mask |= _ellipse(h, w, h + 0.05 * scale, cx, 0.42 * scale, 0.38 * scale)
    return mask


def _box(rng, h: int, w: int, side: int):
    """Random rectangle ``(y0, y1, x0, x1)`` at least `side` px (less on tiny frames) and under half the frame."""
    sy, sx = min(side, max(1, h // 4)), min(side, max(1, w // 4))
    y0, x0 = int(rng.integers(0, h - sy)), int(rng.integers(0, w - sx))
    y1 = y0 + int(rng.integers(sy, max(sy + 1, h // 2)))
    x1 = x0 + int(rng.integers(sx, max(sx + 1, w // 2)))
    return y0, y1, x0, x1


def _tint(rng):
    base = rng.uniform(0.55, 1.0)
    return base * rng.uniform(0.75, 1.0, 3)


def natural_scene(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Float RGB scene whose channels share one luminance field."""
    lum = 120 + rng.uniform(30, 60) * _linear_ramp(rng, h, w)
    lum += rng.uniform(8, 20) * smooth_field(rng, h, w, int(rng.integers(12, 40)))[:, :, 0]
    lum += rng.uniform(2, 6) * smooth_field(rng, h, w, 3)[:, :, 0]
    img = lum[:, :, None] * _tint(rng)[None, None, :]
    # a few tinted objects: walls, furniture, picture frames
    for _ in range(int(rng.integers(2, 5))):
        y0, y1, x0, x1 = _box(rng, h, w, 10)
        shade = rng.uniform(0.6, 1.3)
        img[y0:y1, x0:x1] = lum[y0:y1, x0:x1, None] * shade * _tint(rng)[None, None, :]
    return img


def person_layer(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Skin and clothing texture with luminance-driven colour."""
    lum = 110 + 40 * _linear_ramp(rng, h, w) + 15 * smooth_field(rng, h, w, 10)[:, :, 0]
    lum += 4 * smooth_field(rng, h, w, 3)[:, :, 0]
    return lum[:, :, None] * _tint(rng)[None, None, :]


def camera(rng: np.random.Generator, img: np.ndarray, noise: float) -> np.ndarray:
    """Optical blur plus sensor noise that is partly shared across channels."""
    blurred = img.copy()
    blurred[1:-1, 1:-1] = (
        4 * img[1:-1, 1:-1] + img[:-2, 1:-1] + img[2:, 1:-1] + img[1:-1, :-2] + img[1:-1, 2:]
    ) / 8.0
    h, w, _ = img.shape
    shared = rng.standard_normal((h, w, 1))
    own = rng.standard_normal((h, w, 3))
    return blurred + noise * (0.6 * shared + 0.8 * own)


def rendered_backdrop(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Noise-free synthetic backdrop: per-channel gradients plus flat palette shapes."""
    img = np.empty((h, w, 3))
    for c in range(3):
        img[:, :, c] = rng.uniform(60, 190) + rng.uniform(20, 90) * _linear_ramp(rng, h, w)
    palette = rng.uniform(20, 235, (int(rng.integers(3, 7)), 3))
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(int(rng.integers(3, 8))):
        colour = palette[int(rng.integers(len(palette)))]
        if rng.random() < 0.5:
            y0, y1, x0, x1 = _box(rng, h, w, 8)
            img[y0:y1, x0:x1] = colour
        else:
            cy, cx, r = rng.uniform(0, h), rng.uniform(0, w), rng.uniform(min(6, h / 4), h / 3)
            img[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = colour
    return img


def photo_backdrop(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Stock-photo style backdrop: a natural scene upscaled from half resolution."""
    small = natural_scene(rng, max(2, h // 2), max(2, w // 2))
    return resample_array(small, w, h, w / small.shape[1], h / small.shape[0])


def real_frame(rng: np.random.Generator, w: int, h: int) -> RasterImage:
    scene = natural_scene(rng, h, w)
    mask = person_mask(rng, h, w)
    scene[mask] = person_layer(rng, h, w)[mask]
    shot = camera(rng, scene, rng.uniform(*SENSOR_NOISE))
    return jpeg_roundtrip(RasterImage.from_float(shot), CAPTURE_QF)


def virtual_frame(rng: np.random.Generator, w: int, h: int) -> RasterImage:
    # the person is filmed by the camera; the backdrop is rendered
    mask = person_mask(rng, h, w)
    filmed_person = camera(rng, person_layer(rng, h, w), rng.uniform(*SENSOR_NOISE))
    if rng.random() < PHOTO_BACKDROP_SHARE:
        frame = photo_backdrop(rng, h, w)
    else:
        frame = rendered_backdrop(rng, h, w)
    frame[mask] = filmed_person[mask]
    return jpeg_roundtrip(RasterImage.from_float(frame), CAPTURE_QF)


def frame_rng(seed: int, label: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, label, index])
