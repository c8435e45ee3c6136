"""Segmentation scores and code-correlation diagnostics."""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .imaging import as_mask


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    gt_count: int
    acc: float
    cr: float
    name: str = ""


def _report(tp: int, fp: int, gt: int, name: str = "") -> MetricsReport:
    if gt <= 0:
        raise DomainError("ground truth has no tumor pixels; accuracy is undefined")
    return MetricsReport(tp, fp, gt, tp / gt, (tp - 0.5 * fp) / gt, name)


def score(pred, truth, name: str = "") -> MetricsReport:
    """Acc = TP/GT and CR = (TP - FP/2)/GT for one predicted mask."""
    t = as_mask(truth)
    p = as_mask(pred, t.shape)
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    return _report(tp, fp, int(np.count_nonzero(t)), name)


def aggregate(reports, name: str = "total") -> MetricsReport:
    """Pooled counts over several images."""
    reports = list(reports)
    return _report(sum(r.tp for r in reports), sum(r.fp for r in reports),
                   sum(r.gt_count for r in reports), name)


def metrics_csv(reports, total: bool = True) -> str:
    """CSV table with one row per image and an optional pooled row."""
    reports = list(reports)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "tp", "fp", "gt_count", "acc", "cr"])
    rows = reports + ([aggregate(reports)] if total and reports else [])
    for r in rows:
        w.writerow([r.name, r.tp, r.fp, r.gt_count, f"{r.acc:.6f}", f"{r.cr:.6f}"])
    return buf.getvalue()


@dataclass(frozen=True)
class CorrelationReport:
    matrix: np.ndarray  # cosine similarities, rows/cols grouped by label
    labels: np.ndarray  # label of each row after grouping
    order: np.ndarray  # original index of each row
    intra: float
    inter: float | None
    excluded: np.ndarray


def code_correlation_report(codes, labels) -> CorrelationReport:
    """Normalized correlation of sparse codes, grouped by class.

    ``intra`` averages off-diagonal pairs with equal labels, ``inter`` pairs with
    different labels (None with a single class). Zero codes are dropped.
    """
    X = np.asarray(codes, dtype=np.float64)
    y = np.asarray(labels)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise DomainError("codes and labels do not match")
    norms = np.linalg.norm(X, axis=1)
    zero = norms == 0
    if zero.any():
        warnings.warn(f"{int(zero.sum())} zero-norm codes excluded", stacklevel=2)
    keep = np.flatnonzero(~zero)
    order = keep[np.argsort(y[keep], kind="stable")]
    Xn = X[order] / norms[order, None]
    yl = y[order]
    m = Xn @ Xn.T
    same = yl[:, None] == yl[None, :]
    off = ~np.eye(len(order), dtype=bool)
    intra_sel = same & off
    if not intra_sel.any():
        raise DomainError("need at least two samples in some class")
    inter = float(m[~same].mean()) if (~same).any() else None
    return CorrelationReport(m, yl, order, float(m[intra_sel].mean()), inter, np.flatnonzero(zero))
