"""Trained classifiers bound to the feature scheme they consume."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import nn, svm
from ..errors import BadParams, ConfigInvalid, IoFailure
from .features import CRSPAM_GRID

DETECTORS = ("six_comat_cnn", "crspam_svm", "crspam_cnn")
TRANSFORMS = ("log1p", "none")
# co-mat entries are tiny probabilities; scaling before log1p puts single
# pixel-pair counts near 1 for frames of a few hundred thousand pixels
LOG_GAIN = 65536.0


def feature_scheme(detector: str) -> str:
    if detector not in DETECTORS:
        raise ConfigInvalid(f"unknown detector {detector!r}; expected one of {DETECTORS}")
    return "six_comat" if detector == "six_comat_cnn" else "crspam"


def resolve_transform(detector: str, transform: str) -> str:
    if transform == "auto":
        return "log1p" if detector == "six_comat_cnn" else "none"
    if transform not in TRANSFORMS:
        raise ConfigInvalid(f"unknown input transform {transform!r}")
    return transform


@dataclass
class CnnSettings:
    conv: tuple = nn.FULL_CONV
    dense: tuple = nn.FULL_DENSE
    learning_rate: float = 0.001
    momentum: float = 0.9
    epochs: int = 50
    fine_tune_epochs: int = 10
    batch_size: int = 20
    dropout_conv: float = 0.25
    dropout_dense: float = 0.5
    input_transform: str = "auto"

    def __post_init__(self):
        self.conv = tuple(tuple(int(v) for v in c) for c in self.conv)
        self.dense = tuple(int(v) for v in self.dense)

    def train_config(self, seed: int, fine_tune: bool = False) -> nn.TrainConfig:
        return nn.TrainConfig(
            learning_rate=self.learning_rate, momentum=self.momentum,
            epochs=self.fine_tune_epochs if fine_tune else self.epochs,
            batch_size=self.batch_size, dropout_conv=self.dropout_conv,
            dropout_dense=self.dropout_dense, seed=seed,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv"] = [list(c) for c in self.conv]
        d["dense"] = list(self.dense)
        return d


@dataclass
class SvmSettings:
    folds: int = 5
    C_grid: tuple = svm.DEFAULT_C_GRID
    gamma_scales: tuple = svm.DEFAULT_GAMMA_SCALES
    tol: float = 1e-3

    def __post_init__(self):
        self.C_grid = tuple(float(c) for c in self.C_grid)
        self.gamma_scales = tuple(float(g) for g in self.gamma_scales)

    def to_dict(self) -> dict:
        return {"folds": self.folds, "C_grid": list(self.C_grid),
                "gamma_scales": list(self.gamma_scales), "tol": self.tol}


@dataclass
class Detector:
    kind: str
    model: object
    input_transform: str = "none"
    info: dict = field(default_factory=dict)

    def network_input(self, feat: np.ndarray) -> np.ndarray:
        x = np.asarray(feat, dtype=np.float64)
        if self.kind == "crspam_cnn":
            x = x.reshape(CRSPAM_GRID)
        if self.input_transform == "log1p":
            x = np.log1p(LOG_GAIN * x)
        if self.kind == "six_comat_cnn":
            # stored compactly; the network upcasts each sample to its own dtype
            x = x.astype(np.float32)
        return x

    def predict(self, feats) -> np.ndarray:
        """Labels 1 (virtual) / 0 (real) for a list of raw features."""
        if self.kind == "crspam_svm":
            return (self.model.predict(np.asarray(feats, dtype=np.float64)) == 1).astype(np.int64)
        probs = nn.predict_proba(self.model, [self.network_input(f) for f in feats])
        return (probs >= 0.5).astype(np.int64)

    def save(self, directory) -> None:
        directory = Path(directory)
        try:
            directory.mkdir(parents=True, exist_ok=True)
            meta = {"kind": self.kind, "input_transform": self.input_transform, "info": self.info}
            if self.kind == "crspam_svm":
                svm.save_model(self.model, directory / "model.svm.json")
            else:
                nn.save_checkpoint(self.model, directory / "model.ccn")
            (directory / "detector.json").write_text(json.dumps(meta, indent=2) + "\n")
        except OSError as exc:
            raise IoFailure(f"cannot write detector to {directory}: {exc}") from exc

    @classmethod
    def load(cls, directory) -> Detector:
        directory = Path(directory)
        meta_path = directory / "detector.json"
        if not meta_path.is_file():
            raise FileNotFoundError(f"no detector at {directory}")
        meta = json.loads(meta_path.read_text())
        if meta["kind"] == "crspam_svm":
            model = svm.load_model(directory / "model.svm.json")
        else:
            model = nn.load_checkpoint(directory / "model.ccn")
        return cls(meta["kind"], model, meta.get("input_transform", "none"), meta.get("info", {}))


def fit_detector(kind: str, feats, targets, seed: int, cnn: CnnSettings = CnnSettings(),
                 svm_cfg: SvmSettings = SvmSettings(), init: Detector | None = None,
                 callback=None) -> Detector:
    """Train a detector; with `init` a CNN is fine-tuned from it, an SVM is refit from scratch."""
    targets = np.asarray(targets, dtype=np.int64)
    if kind == "crspam_svm":
        X = np.asarray(feats, dtype=np.float64)
        y = np.where(targets == 1, 1, -1)
        gamma_grid = tuple(s / X.shape[1] for s in svm_cfg.gamma_scales)
        cv = svm.cross_validate(X, y, svm_cfg.folds, svm_cfg.C_grid, gamma_grid, seed, svm_cfg.tol)
        model = svm.smo_train(X, y, cv.C, cv.gamma, svm_cfg.tol, standardize=True)
        info = {"C": cv.C, "gamma": cv.gamma, "cv_accuracy": cv.mean_accuracy,
                "support_vectors": int(len(model.alphas))}
        return Detector(kind, model, "none", info)
    if kind not in DETECTORS:
        raise BadParams(f"unknown detector {kind!r}")
    transform = init.input_transform if init is not None else resolve_transform(kind, cnn.input_transform)
    proto = Detector(kind, None, transform)
    xs = [proto.network_input(f) for f in feats]
    cfg = cnn.train_config(seed, fine_tune=init is not None)
    if init is not None:
        params, history = nn.train((xs, targets), cfg, init_params=init.model, callback=callback)
    else:
        arch = nn.Architecture(xs[0].shape, cnn.conv, cnn.dense)
        params, history = nn.train((xs, targets), cfg, arch=arch, callback=callback)
    info = {"loss": history.loss, "accuracy": history.accuracy}
    if init is not None:
        info = {"pretrain": init.info, "fine_tune": info}
    return Detector(kind, params, transform, info)
