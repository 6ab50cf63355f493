"""A small binary CNN with hand-written backpropagation.

Graph (widths configurable, full-size defaults)::

    conv1 3x3 + ReLU
    conv2 5x5 -> maxpool 3x3/3 -> dropout
    conv3 3x3 + ReLU
    conv4 5x5 -> maxpool 3x3/3 -> dropout
    flatten -> dense + ReLU -> dropout -> dense + ReLU -> dense(1) -> sigmoid

Convolutions use stride 1 and "same" zero padding. Inputs are
channel-last, ``(height, width, channels)``, and the flatten order is
channel-last too; internally activations are kept channel-first so the
patch copies stay contiguous.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DivergedToNaN, EmptyClass, IoFailure, ShapeMismatch

POOL = 3
FULL_CONV = ((32, 3), (32, 5), (64, 3), (64, 5))
FULL_DENSE = (256, 256)
COMAT_INPUT = (256, 256, 6)

_MAGIC = b"CCN1"


@dataclass(frozen=True)
class Architecture:
    input_shape: tuple = COMAT_INPUT
    conv: tuple = FULL_CONV
    dense: tuple = FULL_DENSE

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "conv", tuple(tuple(c) for c in self.conv))
        object.__setattr__(self, "dense", tuple(self.dense))
        if len(self.conv) != 4 or len(self.dense) != 2:
            raise ShapeMismatch("architecture needs four conv layers and two dense layers")

    def trace(self):
        """Spatial sizes after pool 1 and pool 2, and the flatten width."""
        h, w, _ = self.input_shape
        h1, w1 = pooled(h), pooled(w)
        h2, w2 = pooled(h1), pooled(w1)
        if min(h1, w1, h2, w2) < 1:
            raise ShapeMismatch(f"input {self.input_shape} too small for two 3x3/3 poolings")
        return (h1, w1), (h2, w2), h2 * w2 * self.conv[3][0]

    def shapes(self) -> dict:
        cin = self.input_shape[2]
        out = {}
        for i, (filters, k) in enumerate(self.conv, start=1):
            out[f"conv{i}"] = ((k, k, cin, filters), (filters,))
            cin = filters
        flat = self.trace()[2]
        d1, d2 = self.dense
        out["dense1"] = ((flat, d1), (d1,))
        out["dense2"] = ((d1, d2), (d2,))
        out["head"] = ((d2, 1), (1,))
        return out


def pooled(n: int, size: int = POOL, stride: int = POOL) -> int:
    return (n - size) // stride + 1


@dataclass
class ModelParams:
    """Weights and biases keyed by layer name, e.g. ``weights["conv1"] = (W, b)``."""

    arch: Architecture
    weights: dict
    rng_seed: int = 0

    @classmethod
    def init(cls, arch: Architecture = Architecture(), seed: int = 0, dtype=np.float64) -> ModelParams:
        """He-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        weights = {}
        for name, (wshape, bshape) in arch.shapes().items():
            fan_in = int(np.prod(wshape[:-1]))
            limit = np.sqrt(6.0 / fan_in)
            weights[name] = (
                rng.uniform(-limit, limit, wshape).astype(dtype),
                np.zeros(bshape, dtype=dtype),
            )
        return cls(arch, weights, seed)

    @classmethod
    def zeros(cls, arch: Architecture = Architecture()) -> ModelParams:
        return cls(arch, {n: (np.zeros(ws), np.zeros(bs)) for n, (ws, bs) in arch.shapes().items()})

    def copy(self) -> ModelParams:
        return ModelParams(self.arch, {n: (w.copy(), b.copy()) for n, (w, b) in self.weights.items()}, self.rng_seed)

    def astype(self, dtype) -> ModelParams:
        return ModelParams(
            self.arch, {n: (w.astype(dtype), b.astype(dtype)) for n, (w, b) in self.weights.items()}, self.rng_seed
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in self.weights.values() for a in pair])

    def __eq__(self, other):
        if not isinstance(other, ModelParams) or self.arch != other.arch:
            return False
        return all(
            np.array_equal(a, b)
            for name in self.weights
            for a, b in zip(self.weights[name], other.weights[name])
        )


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    momentum: float = 0.9
    epochs: int = 50
    batch_size: int = 20
    dropout_conv: float = 0.25
    dropout_dense: float = 0.5
    seed: int = 0
    dtype: str = "float64"
    # also score the whole set (inference mode) after every epoch
    track_epoch_loss: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1 or not 0 <= self.momentum < 1:
            raise ValueError(f"invalid training configuration {self}")
        for p in (self.dropout_conv, self.dropout_dense):
            if not 0 <= p < 1:
                raise ValueError(f"dropout probability {p} outside [0, 1)")


@dataclass
class History:
    """Per-epoch running training loss and accuracy; `epoch_loss` is the
    end-of-epoch inference-mode loss when tracking is enabled."""

    loss: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)
    epoch_loss: list = field(default_factory=list)


# -- layer primitives ---------------------------------------------------------


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(k*k*C, H*W) patches of a zero-padded (C, H, W) sample, rows ordered (dy, dx, channel)."""
    c, h, w = x.shape
    r = k // 2
    xp = np.zeros((c, h + 2 * r, w + 2 * r), dtype=x.dtype)
    xp[:, r : r + h, r : r + w] = x
    cols = np.empty((k, k, c, h, w), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[i, j] = xp[:, i : i + h, j : j + w]
    return cols.reshape(k * k * c, h * w)


def _as_matrix(w: np.ndarray) -> np.ndarray:
    """(k, k, C, F) kernel -> (F, k*k*C) matrix matching the im2col row order."""
    k, _, c, f = w.shape
    return w.transpose(3, 0, 1, 2).reshape(f, k * k * c)


def conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Same-padded stride-1 convolution of one channel-first (C, H, W) sample.

    Kernels are stored channel-last as (k, k, C_in, C_out).
    """
    k, _, c, f = w.shape
    cx, h, wd = x.shape
    if cx != c:
        raise ShapeMismatch(f"conv expects {c} input channels, got {cx}")
    cols = _im2col(x, k)
    out = (_as_matrix(w) @ cols + b[:, None]).reshape(f, h, wd)
    return out, cols


def conv_backward(dout: np.ndarray, cols: np.ndarray, w: np.ndarray, need_dx: bool = True):
    k, _, c, f = w.shape
    _, h, wd = dout.shape
    dflat = dout.reshape(f, h * wd)
    dw = (dflat @ cols.T).reshape(f, k, k, c).transpose(1, 2, 3, 0)
    db = dflat.sum(axis=1)
    if not need_dx:
        return None, dw, db
    # input gradient of a same convolution = same convolution with the flipped, transposed kernel
    flipped = _as_matrix(w[::-1, ::-1].transpose(0, 1, 3, 2))
    dx = (flipped @ _im2col(dout, k)).reshape(c, h, wd)
    return dx, dw, db


def maxpool_forward(x: np.ndarray):
    c, h, w = x.shape
    ho, wo = pooled(h), pooled(w)
    win = x[:, : ho * POOL, : wo * POOL].reshape(c, ho, POOL, wo, POOL).transpose(0, 1, 3, 2, 4)
    win = win.reshape(c, ho, wo, POOL * POOL)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg)


def maxpool_backward(dout: np.ndarray, cache):
    """Route each window's gradient to its (first) argmax only."""
    (c, h, w), arg = cache
    ho, wo = arg.shape[1:3]
    dwin = np.zeros((c, ho, wo, POOL * POOL), dtype=dout.dtype)
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
    dwin = dwin.reshape(c, ho, wo, POOL, POOL).transpose(0, 1, 3, 2, 4).reshape(c, ho * POOL, wo * POOL)
    dx = np.zeros((c, h, w), dtype=dout.dtype)
    dx[:, : ho * POOL, : wo * POOL] = dwin
    return dx


def dropout_mask(shape, p: float, rng: np.random.Generator, dtype=np.float64):
    """Inverted dropout: kept units are scaled by 1/(1-p)."""
    if p == 0:
        return None
    return ((rng.random(shape) >= p) / (1.0 - p)).astype(dtype)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_with_logits(z, y):
    """Binary cross-entropy of sigmoid(z) against y, computed without overflow."""
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))


# -- network ----------------------------------------------------------------


def _check_input(params: ModelParams, x: np.ndarray):
    if x.shape != params.arch.input_shape:
        raise ShapeMismatch(f"expected input {params.arch.input_shape}, got {x.shape}")


def _forward_one(params: ModelParams, x: np.ndarray, training: bool, rng, dropout):
    """Logit of one sample plus the cache backward needs."""
    wts = params.weights
    p_conv, p_dense = dropout if training else (0.0, 0.0)
    cache = {}
    a, cache["conv1"] = conv_forward(np.ascontiguousarray(x.transpose(2, 0, 1)), *wts["conv1"])
    cache["relu1"] = a > 0
    a = a * cache["relu1"]
    a, cache["conv2"] = conv_forward(a, *wts["conv2"])
    a, cache["pool1"] = maxpool_forward(a)
    cache["drop1"] = dropout_mask(a.shape, p_conv, rng, a.dtype) if training else None
    if cache["drop1"] is not None:
        a = a * cache["drop1"]
    a, cache["conv3"] = conv_forward(a, *wts["conv3"])
    cache["relu3"] = a > 0
    a = a * cache["relu3"]
    a, cache["conv4"] = conv_forward(a, *wts["conv4"])
    a, cache["pool2"] = maxpool_forward(a)
    cache["drop2"] = dropout_mask(a.shape, p_conv, rng, a.dtype) if training else None
    if cache["drop2"] is not None:
        a = a * cache["drop2"]
    cache["flat_shape"] = a.shape
    h = a.transpose(1, 2, 0).reshape(-1)
    cache["in_dense1"] = h
    h = h @ wts["dense1"][0] + wts["dense1"][1]
    cache["relu_d1"] = h > 0
    h = h * cache["relu_d1"]
    cache["drop3"] = dropout_mask(h.shape, p_dense, rng, h.dtype) if training else None
    if cache["drop3"] is not None:
        h = h * cache["drop3"]
    cache["in_dense2"] = h
    h = h @ wts["dense2"][0] + wts["dense2"][1]
    cache["relu_d2"] = h > 0
    h = h * cache["relu_d2"]
    cache["in_head"] = h
    z = float((h @ wts["head"][0] + wts["head"][1])[0])
    return z, cache


def _backward_one(params: ModelParams, cache, dz: float) -> dict:
    wts = params.weights
    grads = {}
    g = np.array([dz], dtype=cache["in_head"].dtype)
    grads["head"] = (np.outer(cache["in_head"], g), g.copy())
    g = (wts["head"][0] @ g) * cache["relu_d2"]
    grads["dense2"] = (np.outer(cache["in_dense2"], g), g.copy())
    g = wts["dense2"][0] @ g
    if cache["drop3"] is not None:
        g = g * cache["drop3"]
    g = g * cache["relu_d1"]
    grads["dense1"] = (np.outer(cache["in_dense1"], g), g.copy())
    c, hh, ww = cache["flat_shape"]
    g = np.ascontiguousarray((wts["dense1"][0] @ g).reshape(hh, ww, c).transpose(2, 0, 1))
    if cache["drop2"] is not None:
        g = g * cache["drop2"]
    g = maxpool_backward(g, cache["pool2"])
    g, dw, db = conv_backward(g, cache["conv4"], wts["conv4"][0])
    grads["conv4"] = (dw, db)
    g = g * cache["relu3"]
    g, dw, db = conv_backward(g, cache["conv3"], wts["conv3"][0])
    grads["conv3"] = (dw, db)
    if cache["drop1"] is not None:
        g = g * cache["drop1"]
    g = maxpool_backward(g, cache["pool1"])
    g, dw, db = conv_backward(g, cache["conv2"], wts["conv2"][0])
    grads["conv2"] = (dw, db)
    g = g * cache["relu1"]
    _, dw, db = conv_backward(g, cache["conv1"], wts["conv1"][0], need_dx=False)
    grads["conv1"] = (dw, db)
    return grads


def logit(params: ModelParams, x, training: bool = False, seed=0, dropout=(0.25, 0.5)) -> float:
    x = np.asarray(x, dtype=params.weights["conv1"][0].dtype)
    _check_input(params, x)
    return _forward_one(params, x, training, np.random.default_rng(seed), dropout)[0]


def forward(params: ModelParams, x, training: bool = False, seed=0, dropout=(0.25, 0.5)) -> float:
    """Probability that `x` is virtual (class 1). Dropout masks are drawn from `seed`."""
    return float(sigmoid(logit(params, x, training, seed, dropout)))


def loss_and_grad(params: ModelParams, x, label: int, training: bool = False, seed=0, dropout=(0.25, 0.5)):
    """Binary cross-entropy of one sample and its exact gradient for every parameter."""
    x = np.asarray(x, dtype=params.weights["conv1"][0].dtype)
    _check_input(params, x)
    z, cache = _forward_one(params, x, training, np.random.default_rng(seed), dropout)
    p = float(sigmoid(z))
    return float(bce_with_logits(z, label)), p, _backward_one(params, cache, p - label)


def backward(params: ModelParams, x, label: int, training: bool = False, seed=0, dropout=(0.25, 0.5)) -> dict:
    return loss_and_grad(params, x, label, training, seed, dropout)[2]


def predict_proba(params: ModelParams, xs) -> np.ndarray:
    return np.array([forward(params, x) for x in xs])


def predict(params: ModelParams, x) -> dict:
    """Label "virtual" when the probability reaches 0.5, else "real"."""
    p = forward(params, x)
    return {"label": "virtual" if p >= 0.5 else "real", "probability": p}


def _sample_seed(seed: int, epoch: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, epoch, index])


def train(data, cfg: TrainConfig = TrainConfig(), init_params: ModelParams | None = None,
          arch: Architecture | None = None, callback=None):
    """Minibatch SGD with momentum: ``v <- mu*v - lr*grad``, ``theta <- theta + v``.

    `data` is ``(xs, labels)`` with labels 0 (real) / 1 (virtual). Passing
    `init_params` fine-tunes a copy of them. `callback(epoch, history)` runs
    after every epoch.
    """
    xs, labels = data
    labels = np.asarray(labels, dtype=np.int64)
    if len(xs) != len(labels):
        raise ShapeMismatch("data and labels differ in length")
    if not (np.any(labels == 0) and np.any(labels == 1)):
        raise EmptyClass("training data must contain both classes")
    dtype = np.dtype(cfg.dtype)
    if init_params is None:
        arch = arch or Architecture(input_shape=tuple(np.shape(xs[0])))
        params = ModelParams.init(arch, cfg.seed, dtype)
    else:
        params = init_params.astype(dtype)
    velocity = {n: (np.zeros_like(w), np.zeros_like(b)) for n, (w, b) in params.weights.items()}
    dropout = (cfg.dropout_conv, cfg.dropout_dense)
    order_rng = np.random.default_rng(cfg.seed)
    history = History()
    n = len(labels)
    for epoch in range(cfg.epochs):
        order = order_rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            acc = {nm: [np.zeros_like(w), np.zeros_like(b)] for nm, (w, b) in params.weights.items()}
            for idx in batch:
                loss, p, grads = loss_and_grad(
                    params, xs[idx], labels[idx], True, _sample_seed(cfg.seed, epoch, int(idx)), dropout
                )
                total_loss += loss
                correct += int((p >= 0.5) == bool(labels[idx]))
                for nm, (gw, gb) in grads.items():
                    np.add(acc[nm][0], gw, out=acc[nm][0])
                    np.add(acc[nm][1], gb, out=acc[nm][1])
            if not np.isfinite(total_loss):
                raise DivergedToNaN(f"loss became non-finite in epoch {epoch}")
            scale = 1.0 / len(batch)
            for nm, (w, b) in params.weights.items():
                vw, vb = velocity[nm]
                vw *= cfg.momentum
                vw -= cfg.learning_rate * scale * acc[nm][0]
                vb *= cfg.momentum
                vb -= cfg.learning_rate * scale * acc[nm][1]
                w += vw
                b += vb
        history.loss.append(total_loss / n)
        history.accuracy.append(correct / n)
        if cfg.track_epoch_loss:
            history.epoch_loss.append(float(np.mean([float(bce_with_logits(logit(params, xs[i]), labels[i]))
                                                     for i in range(n)])))
        if callback is not None:
            callback(epoch, history)
    return params, history


# -- checkpoints ------------------------------------------------------------


def save_checkpoint(params: ModelParams, path, cfg: TrainConfig | None = None, history: History | None = None):
    """Binary ``CCN1`` file (little-endian f64) plus a JSON sidecar."""
    path = Path(path)
    names = list(params.arch.shapes())
    chunks = [_MAGIC, struct.pack("<I", len(names))]
    for name in names:
        for arr in params.weights[name]:
            chunks.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
    for name in names:
        for arr in params.weights[name]:
            chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    sidecar = {
        "architecture": {"input_shape": list(params.arch.input_shape),
                         "conv": [list(c) for c in params.arch.conv],
                         "dense": list(params.arch.dense)},
        "rng_seed": params.rng_seed,
        "train_config": asdict(cfg) if cfg else None,
        "history": asdict(history) if history else None,
    }
    try:
        path.write_bytes(b"".join(chunks))
        path.with_name(path.name + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_checkpoint(path) -> ModelParams:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != _MAGIC:
        raise ShapeMismatch(f"{path}: not a CCN1 checkpoint")
    (count,) = struct.unpack_from("<I", raw, 4)
    pos = 8
    shapes = []
    for _ in range(2 * count):
        (ndim,) = struct.unpack_from("<I", raw, pos)
        shapes.append(struct.unpack_from(f"<{ndim}I", raw, pos + 4))
        pos += 4 + 4 * ndim
    arrays = []
    for shape in shapes:
        size = int(np.prod(shape))
        arrays.append(np.frombuffer(raw, "<f8", size, pos).reshape(shape).astype(np.float64))
        pos += 8 * size
    meta = json.loads(path.with_name(path.name + ".json").read_text())
    a = meta["architecture"]
    arch = Architecture(tuple(a["input_shape"]), tuple(tuple(c) for c in a["conv"]), tuple(a["dense"]))
    names = list(arch.shapes())
    if len(names) != count:
        raise ShapeMismatch(f"{path}: layer count {count} does not match architecture")
    weights = {name: (arrays[2 * i], arrays[2 * i + 1]) for i, name in enumerate(names)}
    for name, (ws, bs) in arch.shapes().items():
        if weights[name][0].shape != ws or weights[name][1].shape != bs:
            raise ShapeMismatch(f"{path}: layer {name} has unexpected shape")
    return ModelParams(arch, weights, meta.get("rng_seed", 0))
