"""Pixel classifiers on kernel sparse codes.

``svm_train`` minimizes the primal

    0.5 * (|w|^2 + b^2) + C * sum_i max(0, 1 - y_i (w.x_i + b))

by dual coordinate descent over a seeded sample order, stopping on a relative
duality gap. The bias is handled as an extra constant feature, so it is
regularized along with ``w``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DomainError, SolverError

TUMOR = 1
NON_TUMOR = -1


@dataclass(frozen=True)
class LinearClassifier:
    weights: np.ndarray
    bias: float
    reg_c: float = 1.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if not (np.all(np.isfinite(w)) and np.isfinite(self.bias)):
            raise DomainError("classifier parameters must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))


@dataclass(frozen=True)
class ErrorClassifier:
    epsilon: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.epsilon):
            raise DomainError("epsilon must be finite")


@njit(cache=True)
def _dcd_epoch(X, y, C, alpha, w, qii, order):
    # w holds [weights..., bias]; the bias feature is the constant 1
    d = X.shape[1]
    max_pg = 0.0
    for i in order:
        g = w[d]
        for j in range(d):
            g += w[j] * X[i, j]
        g = y[i] * g - 1.0
        a = alpha[i]
        if a <= 0.0:
            pg = min(g, 0.0)
        elif a >= C:
            pg = max(g, 0.0)
        else:
            pg = g
        if abs(pg) > max_pg:
            max_pg = abs(pg)
        if pg != 0.0:
            a_new = min(max(a - g / qii[i], 0.0), C)
            delta = (a_new - a) * y[i]
            alpha[i] = a_new
            for j in range(d):
                w[j] += delta * X[i, j]
            w[d] += delta
    return max_pg


def hinge_objective(clf: LinearClassifier, codes, labels, reg_c: float | None = None) -> float:
    """Primal objective of ``clf`` on a labelled set."""
    X = np.asarray(codes, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    c = clf.reg_c if reg_c is None else reg_c
    margins = y * (X @ clf.weights + clf.bias)
    return 0.5 * (clf.weights @ clf.weights + clf.bias ** 2) + c * np.maximum(0.0, 1.0 - margins).sum()


def _check_training_set(codes, labels) -> tuple[np.ndarray, np.ndarray]:
    X = np.ascontiguousarray(codes, dtype=np.float64)
    y = np.ascontiguousarray(labels, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] != y.size:
        raise DomainError(f"codes of shape {X.shape} do not match {y.size} labels")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise DomainError("labels must be +1 or -1")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise DomainError("training set needs examples of both classes")
    if not np.all(np.isfinite(X)):
        raise DomainError("codes must be finite")
    return X, y


def svm_train(codes, labels, reg_c: float = 1.0, seed: int = 0, rel_tol: float = 1e-7,
              max_epochs: int = 20000) -> LinearClassifier:
    """Train a two-class linear SVM on code vectors.

    Converges when the duality gap falls below ``rel_tol`` times the primal
    objective, which bounds the primal suboptimality by the same amount.
    """
    if not (np.isfinite(reg_c) and reg_c > 0):
        raise DomainError(f"reg_c must be positive, got {reg_c}")
    X, y = _check_training_set(codes, labels)
    n, d = X.shape
    rng = np.random.default_rng(seed)
    alpha = np.zeros(n)
    w = np.zeros(d + 1)
    qii = (X * X).sum(axis=1) + 1.0

    def gap_and_primal():
        margins = y * (X @ w[:d] + w[d])
        half_norm = 0.5 * (w @ w)
        primal = half_norm + reg_c * np.maximum(0.0, 1.0 - margins).sum()
        dual = alpha.sum() - half_norm
        return primal - dual, primal

    for _ in range(max_epochs):
        _dcd_epoch(X, y, float(reg_c), alpha, w, qii, rng.permutation(n))
        gap, primal = gap_and_primal()
        if gap <= rel_tol * max(primal, 1e-300):
            return LinearClassifier(weights=w[:d].copy(), bias=float(w[d]), reg_c=reg_c)
    best = LinearClassifier(weights=w[:d].copy(), bias=float(w[d]), reg_c=reg_c)
    raise SolverError(f"SVM duality gap {gap:.3e} after {max_epochs} epochs", best=best)


def svm_decision(clf: LinearClassifier, codes) -> np.ndarray:
    X = np.asarray(codes, dtype=np.float64)
    if X.shape[-1] != clf.weights.size:
        raise DomainError(f"code length {X.shape[-1]} does not match classifier dimension {clf.weights.size}")
    return X @ clf.weights + clf.bias


def svm_predict(clf: LinearClassifier, code) -> int:
    """+1 (tumor) or -1; a zero decision value counts as tumor."""
    value = float(svm_decision(clf, np.asarray(code, dtype=np.float64).ravel()))
    return TUMOR if value >= 0.0 else NON_TUMOR


def svm_predict_many(clf: LinearClassifier, codes) -> np.ndarray:
    return np.where(svm_decision(clf, codes) >= 0.0, TUMOR, NON_TUMOR)


def error_classify(e_n: float, e_t: float, clf: ErrorClassifier) -> int:
    """Tumor iff the non-tumor error exceeds the tumor error by at least epsilon."""
    return TUMOR if e_n - e_t >= clf.epsilon else NON_TUMOR


def error_classify_map(e_n, e_t, clf: ErrorClassifier) -> np.ndarray:
    """Vectorized :func:`error_classify`; True marks tumor."""
    return (np.asarray(e_n, dtype=np.float64) - np.asarray(e_t, dtype=np.float64)) >= clf.epsilon
