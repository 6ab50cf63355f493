"""Gaussian-kernel soft-margin SVM trained with SMO, plus stratified k-fold grid search.

The solver minimises ``0.5 a'Qa - sum(a)`` subject to ``0 <= a <= C`` and
``y'a = 0`` with ``Q[i, j] = y_i y_j k(x_i, x_j)``, picking the
maximal-violating pair each iteration.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyClass, IoFailure, LengthMismatch, MaxIterationsExceeded, TooFewExamples

TAU = 1e-12
DEFAULT_C_GRID = (0.1, 1.0, 10.0, 100.0)
DEFAULT_GAMMA_SCALES = (0.1, 1.0, 10.0)  # multiplied by 1/d


@dataclass
class SvmModel:
    support_vectors: np.ndarray
    alphas: np.ndarray
    labels: np.ndarray
    bias: float
    kernel_gamma: float
    C: float
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    trace: list = field(default_factory=list, repr=False)

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]

    def _scale(self, X: np.ndarray) -> np.ndarray:
        if self.mean is None:
            return X
        return (X - self.mean) / self.std

    def decision_function(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise LengthMismatch(f"model expects {self.dim} features, got {X.shape[1]}")
        if len(self.alphas) == 0:
            return np.full(len(X), self.bias)
        K = rbf_matrix(self._scale(X), self.support_vectors, self.kernel_gamma)
        return K @ (self.alphas * self.labels) + self.bias

    def predict(self, X) -> np.ndarray:
        return np.where(self.decision_function(X) >= 0, 1, -1)


def rbf_kernel(a, b, gamma: float) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch(f"feature lengths differ: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.exp(-gamma * np.dot(d, d)))


def rbf_matrix(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


def standardization(X: np.ndarray):
    """Per-dimension mean and std; constant dimensions get std 1."""
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std == 0] = 1.0
    return mean, std


def smo_train(X, y, C: float = 1.0, gamma: float = 1.0, tol: float = 1e-3,
              max_iter: int = 200_000, standardize: bool = False, record_trace: bool = False) -> SvmModel:
    """Train on labels in {-1, +1}. Stops once the maximal KKT violation is below `tol`.

    With `record_trace`, the dual objective after every accepted pair
    update is stored in ``model.trace``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise LengthMismatch("X must be (n, d) with one label per row")
    if not (np.any(y == 1) and np.any(y == -1)) or not np.all(np.abs(y) == 1):
        raise EmptyClass("labels must be +/-1 with both classes present")
    mean = std = None
    if standardize:
        mean, std = standardization(X)
        X = (X - mean) / std

    n = len(y)
    K = rbf_matrix(X, X, gamma)
    diag = np.diag(K).copy()
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of the minimisation objective
    dual = 0.0
    trace = []
    for _ in range(max_iter):
        F = -y * grad
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        i = int(np.argmax(np.where(up, F, -np.inf)))
        j = int(np.argmin(np.where(low, F, np.inf)))
        gap = F[i] - F[j]
        if gap < tol:
            break
        eta = max(diag[i] + diag[j] - 2.0 * K[i, j], TAU)
        step = gap / eta
        step = min(step, C - alpha[i] if y[i] > 0 else alpha[i])
        step = min(step, alpha[j] if y[j] > 0 else C - alpha[j])
        alpha[i] += y[i] * step
        alpha[j] -= y[j] * step
        # snap to the box to keep bound tests exact
        for k in (i, j):
            if alpha[k] < 1e-12 * C:
                alpha[k] = 0.0
            elif alpha[k] > C * (1 - 1e-12):
                alpha[k] = C
        grad += step * y * (K[:, i] - K[:, j])
        dual += step * gap - 0.5 * step * step * (diag[i] + diag[j] - 2.0 * K[i, j])
        if record_trace:
            trace.append(dual)
    else:
        raise MaxIterationsExceeded(f"SMO did not converge in {max_iter} iterations")

    F = -y * grad
    free = (alpha > 0) & (alpha < C)
    if np.any(free):
        bias = float(F[free].mean())
    else:
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        hi = F[up].max() if np.any(up) else 0.0
        lo = F[low].min() if np.any(low) else 0.0
        bias = float((hi + lo) / 2.0)
    sv = alpha > 0
    return SvmModel(X[sv], alpha[sv], y[sv], bias, gamma, C, mean, std, trace)


def dual_objective(model_alphas, labels, K) -> float:
    ay = model_alphas * labels
    return float(model_alphas.sum() - 0.5 * ay @ K @ ay)


def svm_predict(model: SvmModel, x) -> dict:
    """Score ``sum a_i y_i k(x_i, x) + b``; a zero score counts as +1."""
    score = float(model.decision_function(np.asarray(x, dtype=np.float64)[None, :])[0])
    return {"label": 1 if score >= 0 else -1, "score": score}


def stratified_folds(y, folds: int, seed: int = 0) -> list:
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    assignment = np.empty(len(y), dtype=np.int64)
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        assignment[idx] = np.arange(len(idx)) % folds
    return [np.flatnonzero(assignment == f) for f in range(folds)]


@dataclass
class CrossValidation:
    C: float
    gamma: float
    mean_accuracy: float
    fold_accuracies: dict  # (C, gamma) -> list of per-fold accuracies


def cross_validate(X, y, folds: int = 5, C_grid=DEFAULT_C_GRID, gamma_grid=None,
                   seed: int = 0, tol: float = 1e-3, standardize: bool = True) -> CrossValidation:
    """Grid search by stratified k-fold accuracy; ties go to smaller C, then smaller gamma."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if len(y) < folds:
        raise TooFewExamples(f"{len(y)} examples cannot fill {folds} folds")
    if gamma_grid is None:
        gamma_grid = tuple(s / X.shape[1] for s in DEFAULT_GAMMA_SCALES)
    parts = stratified_folds(y, folds, seed)
    results = {}
    for C in sorted(C_grid):
        for gamma in sorted(gamma_grid):
            accs = []
            for f in range(folds):
                test = parts[f]
                train = np.concatenate([parts[g] for g in range(folds) if g != f])
                model = smo_train(X[train], y[train], C, gamma, tol, standardize=standardize)
                accs.append(float(np.mean(model.predict(X[test]) == y[test])))
            results[(C, gamma)] = accs
    best = None
    for key, accs in results.items():
        score = round(float(np.mean(accs)), 12)
        if best is None or score > best[1]:
            best = (key, score)
    (C, gamma), score = best
    return CrossValidation(C, gamma, score, results)


def _b64(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")


def _unb64(text: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(text), dtype="<f8").astype(np.float64)


def save_model(model: SvmModel, path) -> None:
    doc = {
        "C": model.C,
        "gamma": model.kernel_gamma,
        "bias": model.bias,
        "alphas": model.alphas.tolist(),
        "labels": [int(v) for v in model.labels],
        "dim": model.dim,
        "standardization": None if model.mean is None else {"mean": _b64(model.mean), "std": _b64(model.std)},
        "support_vectors": [_b64(sv) for sv in model.support_vectors],
    }
    try:
        Path(path).write_text(json.dumps(doc, indent=1) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_model(path) -> SvmModel:
    doc = json.loads(Path(path).read_text())
    dim = doc["dim"]
    svs = np.array([_unb64(s) for s in doc["support_vectors"]]).reshape(-1, dim)
    st = doc.get("standardization")
    mean = std = None
    if st:
        mean, std = _unb64(st["mean"]), _unb64(st["std"])
    return SvmModel(svs, np.array(doc["alphas"], dtype=np.float64), np.array(doc["labels"], dtype=np.float64),
                    float(doc["bias"]), float(doc["gamma"]), float(doc["C"]), mean, std)
