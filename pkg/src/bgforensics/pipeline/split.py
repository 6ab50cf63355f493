"""Seeded, label-stratified train/val/test splits."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import BadParams, IoFailure

DEFAULT_FRACTIONS = (0.7, 0.1, 0.2)


@dataclass(frozen=True)
class SplitPlan:
    train: tuple
    val: tuple
    test: tuple
    seed: int = 0
    stratified: bool = True
    fractions: tuple = field(default=DEFAULT_FRACTIONS)

    def check(self, n: int | None = None) -> None:
        parts = [set(self.train), set(self.val), set(self.test)]
        if parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2]:
            raise BadParams("split parts overlap")
        if n is not None and set().union(*parts) != set(range(n)):
            raise BadParams("split does not cover the selection")

    def to_dict(self) -> dict:
        return {"seed": self.seed, "stratified": self.stratified, "fractions": list(self.fractions),
                "train": list(self.train), "val": list(self.val), "test": list(self.test)}

    @classmethod
    def from_dict(cls, d: dict) -> SplitPlan:
        return cls(tuple(d["train"]), tuple(d["val"]), tuple(d["test"]), d.get("seed", 0),
                   d.get("stratified", True), tuple(d.get("fractions", DEFAULT_FRACTIONS)))

    def write(self, path) -> None:
        try:
            Path(path).write_text(json.dumps(self.to_dict()) + "\n")
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc}") from exc


def _counts(n: int, fractions) -> tuple:
    n_train = int(np.floor(n * fractions[0] + 0.5))
    n_val = int(np.floor(n * fractions[1] + 0.5))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    return n_train, n_val


def make_split(labels, fractions=DEFAULT_FRACTIONS, seed: int = 0, stratified: bool = True) -> SplitPlan:
    """Assign every index of `labels` to train, val or test.

    With stratification each label is split on its own, so every part holds
    both classes whenever a class has at least three members and all
    fractions are positive.
    """
    labels = np.asarray(labels)
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1) > 1e-9:
        raise BadParams(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    if len(labels) == 0:
        raise BadParams("cannot split an empty selection")
    rng = np.random.default_rng(seed)
    groups = [np.flatnonzero(labels == c) for c in np.unique(labels)] if stratified else [np.arange(len(labels))]
    train, val, test = [], [], []
    for idx in groups:
        idx = idx[rng.permutation(len(idx))]
        n_train, n_val = _counts(len(idx), fractions)
        if stratified and len(idx) >= 3:
            # keep every part populated when its fraction is positive
            n_train = max(n_train, 1) if fractions[0] > 0 else 0
            n_val = max(n_val, 1) if fractions[1] > 0 else 0
            if fractions[2] > 0 and n_train + n_val >= len(idx):
                if n_train > n_val:
                    n_train = len(idx) - n_val - 1
                else:
                    n_val = len(idx) - n_train - 1
        train += idx[:n_train].tolist()
        val += idx[n_train : n_train + n_val].tolist()
        test += idx[n_train + n_val :].tolist()
    plan = SplitPlan(tuple(sorted(train)), tuple(sorted(val)), tuple(sorted(test)), seed, stratified, fractions)
    plan.check(len(labels))
    return plan
