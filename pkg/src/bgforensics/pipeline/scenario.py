"""Scenario orchestration: train a detector, then score it on clean and attacked test frames."""

from __future__ import annotations

import datetime as _dt
import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from ..attacks import AttackChain
from ..errors import ConfigInvalid, EmptyClass, EmptyDataset, LengthMismatch
from .detector import DETECTORS, CnnSettings, Detector, SvmSettings, feature_scheme, fit_detector
from .features import featurize_paths
from .manifest import DatasetManifest
from .split import DEFAULT_FRACTIONS, SplitPlan, make_split

log = logging.getLogger(__name__)

REGIMES = ("unaware", "aware")
CLEAN = "clean"


def _filters(value, name):
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigInvalid(f"{name} must be an object mapping tag -> value(s)")
    return {k: (list(v) if isinstance(v, (list, tuple)) else v) for k, v in sorted(value.items())}


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    feature_scheme: str = "six_comat_cnn"
    regime: str = "unaware"
    attack_matrix: list = field(default_factory=list)
    train_source_tags: dict = field(default_factory=dict)
    test_source_tags: dict = field(default_factory=dict)
    seed: int = 0
    split_fractions: tuple = DEFAULT_FRACTIONS
    cnn: CnnSettings = field(default_factory=CnnSettings)
    svm: SvmSettings = field(default_factory=SvmSettings)
    manifest: str | None = None
    timestamps: bool = False

    def __post_init__(self):
        if self.feature_scheme not in DETECTORS:
            raise ConfigInvalid(f"feature_scheme must be one of {DETECTORS}, got {self.feature_scheme!r}")
        if self.regime not in REGIMES:
            raise ConfigInvalid(f"regime must be one of {REGIMES}, got {self.regime!r}")
        self.attack_matrix = [c if isinstance(c, AttackChain) else AttackChain.parse(c) for c in self.attack_matrix]
        if self.regime == "aware" and not self.attack_matrix:
            raise ConfigInvalid("the aware regime needs a non-empty attack_matrix")
        self.train_source_tags = _filters(self.train_source_tags, "train_source_tags")
        self.test_source_tags = _filters(self.test_source_tags, "test_source_tags")
        self.split_fractions = tuple(float(f) for f in self.split_fractions)
        if isinstance(self.cnn, dict):
            self.cnn = CnnSettings(**self.cnn)
        if isinstance(self.svm, dict):
            self.svm = SvmSettings(**self.svm)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "feature_scheme": self.feature_scheme,
            "regime": self.regime,
            "attack_matrix": [c.to_json() for c in self.attack_matrix],
            "train_source_tags": self.train_source_tags,
            "test_source_tags": self.test_source_tags,
            "seed": self.seed,
            "split_fractions": list(self.split_fractions),
            "cnn": self.cnn.to_dict(),
            "svm": self.svm.to_dict(),
            "manifest": self.manifest,
            "timestamps": self.timestamps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ScenarioConfig:
        if not isinstance(d, dict):
            raise ConfigInvalid("scenario config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigInvalid(f"unknown scenario config keys {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigInvalid(f"bad scenario config: {exc}") from exc

    @classmethod
    def load(cls, path) -> ScenarioConfig:
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"{path}: not valid JSON: {exc}") from exc
        cfg = cls.from_dict(doc)
        if cfg.manifest is not None and not Path(cfg.manifest).is_absolute():
            cfg.manifest = str(path.parent / cfg.manifest)
        return cfg


@dataclass
class ReportRow:
    scenario: str
    attack: str
    n: int
    correct: int

    @property
    def accuracy(self) -> float:
        return float(Fraction(self.correct, self.n))

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "attack": self.attack, "n": self.n,
                "correct": self.correct, "accuracy": self.accuracy}


@dataclass
class EvalReport:
    scenario: str
    rows: list
    config: dict
    seed: int
    split: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)
    timestamps: dict | None = None
    detector: Detector | None = field(default=None, repr=False, compare=False)

    def row(self, attack: str) -> ReportRow:
        for r in self.rows:
            if r.attack == attack:
                return r
        raise KeyError(attack)

    def to_dict(self) -> dict:
        doc = {
            "schema": "report_v1",
            "scenario": self.scenario,
            "seed": self.seed,
            "config": self.config,
            "split": self.split,
            "rows": [r.to_dict() for r in self.rows],
            "training": self.training,
        }
        if self.timestamps is not None:
            doc["timestamps"] = self.timestamps
        return doc

    @classmethod
    def from_dict(cls, d: dict) -> EvalReport:
        rows = [ReportRow(r["scenario"], r["attack"], r["n"], r["correct"]) for r in d["rows"]]
        return cls(d["scenario"], rows, d.get("config", {}), d.get("seed", 0), d.get("split", {}),
                   d.get("training", {}), d.get("timestamps"))


def accuracy_fraction(predictions, labels) -> Fraction:
    predictions = list(predictions)
    labels = list(labels)
    if len(predictions) != len(labels):
        raise LengthMismatch(f"{len(predictions)} predictions for {len(labels)} labels")
    if not labels:
        raise EmptyDataset("accuracy of an empty set is undefined")
    correct = sum(int(p == y) for p, y in zip(predictions, labels))
    return Fraction(correct, len(labels))


def accuracy(predictions, labels) -> float:
    """Exact correct/total as the nearest float."""
    return float(accuracy_fraction(predictions, labels))


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _check_classes(targets, what):
    if len(set(targets)) < 2:
        raise EmptyClass(f"{what} selection must contain both classes")


def select_frames(cfg: ScenarioConfig, manifest: DatasetManifest, split: SplitPlan | None = None):
    """Split the manifest and apply the tag filters; returns ``(split, train_idx, test_idx)``."""
    targets = manifest.targets()
    if split is None:
        split = make_split(targets, cfg.split_fractions, cfg.seed)
    split.check()
    train_ok = set(manifest.matching(cfg.train_source_tags))
    test_ok = set(manifest.matching(cfg.test_source_tags))
    train_idx = [i for i in split.train if i in train_ok]
    test_idx = [i for i in split.test if i in test_ok]
    if not train_idx or not test_idx:
        raise EmptyDataset("tag filters leave no training or no test frames")
    _check_classes([targets[i] for i in train_idx], "training")
    return split, train_idx, test_idx


def _featurizer(manifest: DatasetManifest, scheme: str, threads: int):
    paths = [manifest.resolve(e) for e in manifest.entries]

    def feats_for(indices, chain=None):
        # manifest indices double as noise salts, so every frame gets its own realisation
        return featurize_paths([paths[i] for i in indices], scheme, chain, indices, threads)

    return feats_for


def train_detector(cfg: ScenarioConfig, manifest: DatasetManifest, train_idx, pretrained: Detector | None = None,
                   threads: int = 1, callback=None) -> Detector:
    """Unaware: train on clean frames. Aware: fine-tune the unaware detector on clean + attacked copies.

    In the aware regime each training frame contributes one attacked copy,
    with chains from the attack matrix assigned round-robin. The SVM cannot
    be warm-started, so its aware variant is refit on the enlarged set.
    """
    targets = manifest.targets()
    feats_for = _featurizer(manifest, feature_scheme(cfg.feature_scheme), threads)
    y_train = [targets[i] for i in train_idx]
    clean = feats_for(train_idx)
    detector = pretrained
    if detector is None:
        log.info("training %s on %d clean frames", cfg.feature_scheme, len(train_idx))
        detector = fit_detector(cfg.feature_scheme, clean, y_train, cfg.seed, cfg.cnn, cfg.svm, callback=callback)
    if cfg.regime == "aware":
        chains = cfg.attack_matrix
        attacked = []
        for j, i in enumerate(train_idx):
            attacked += feats_for([i], chains[j % len(chains)])
        log.info("aware training on %d clean + %d attacked frames", len(clean), len(attacked))
        init = None if cfg.feature_scheme == "crspam_svm" else detector
        detector = fit_detector(cfg.feature_scheme, clean + attacked, y_train + y_train, cfg.seed + 1,
                                cfg.cnn, cfg.svm, init=init, callback=callback)
    return detector


def evaluate(detector: Detector, manifest: DatasetManifest, test_idx, chains, scenario: str,
             threads: int = 1) -> list:
    """One report row for clean test frames, then one per attack chain."""
    targets = manifest.targets()
    scheme = "six_comat" if detector.kind == "six_comat_cnn" else "crspam"
    feats_for = _featurizer(manifest, scheme, threads)
    y_test = [targets[i] for i in test_idx]
    rows = []
    for chain in [None] + list(chains):
        name = CLEAN if chain is None else chain.describe()
        preds = detector.predict(feats_for(test_idx, chain))
        frac = accuracy_fraction(preds.tolist(), y_test)
        rows.append(ReportRow(scenario, name, len(y_test), int(frac * len(y_test))))
        log.info("%s: accuracy %.4f on %d frames", name, float(frac), len(y_test))
    return rows


def run_scenario(cfg: ScenarioConfig, manifest: DatasetManifest, split: SplitPlan | None = None,
                 pretrained: Detector | None = None, threads: int = 1, callback=None) -> EvalReport:
    """Train the configured detector and score it on clean and attacked test frames.

    `pretrained` skips unaware training (an aware run then fine-tunes it).
    Test frames never enter training in any form.
    """
    started = _now() if cfg.timestamps else None
    split, train_idx, test_idx = select_frames(cfg, manifest, split)
    detector = train_detector(cfg, manifest, train_idx, pretrained, threads, callback)
    rows = evaluate(detector, manifest, test_idx, cfg.attack_matrix, cfg.name, threads)
    timestamps = {"started": started, "finished": _now()} if cfg.timestamps else None
    return EvalReport(
        cfg.name, rows, cfg.to_dict(), cfg.seed,
        {"n_train": len(train_idx), "n_val": len(split.val), "n_test": len(test_idx)},
        detector.info, timestamps, detector,
    )
