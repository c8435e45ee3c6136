"""Kernel sparse coding: l1-regularized coding of one sample against a kernel dictionary.

The objective for a code ``x`` is

    k_yy - 2 x.k_dy + x.K_dd.x + lam * |x|_1

and only needs kernel similarities. It is minimized with feature-sign search;
the returned code is certified against the l1 stationarity conditions.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numba
import numpy as np
from numba import njit, prange

from .errors import DomainError, SolverError
from .kernels import PSD_TOL, min_eigenvalue

RESIDUAL_CLAMP = 1e-10

_OK, _BUDGET, _CAPPED = 0, 1, 2


def _configure_threads() -> None:
    # the bundled TBB is too old for numba; OpenMP avoids the probe warning
    if numba.config.THREADING_LAYER == "default":
        numba.config.THREADING_LAYER = "omp"
    value = os.environ.get("KERNSEG_THREADS")
    if not value:
        return
    try:
        n = int(value)
    except ValueError:
        return
    if n >= 1:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


_configure_threads()


class CallCounter:
    """Counts per-sample coding problems solved (single or batched)."""

    def __init__(self):
        self.count = 0

    def add(self, n: int = 1) -> None:
        self.count += int(n)

    def reset(self) -> None:
        self.count = 0


coding_calls = CallCounter()


@dataclass(frozen=True)
class SolverConfig:
    lam: float = 0.1
    kkt_tol: float = 1e-6
    max_nonzeros: int | None = None
    max_steps: int | None = None  # None -> 10 * K

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise DomainError(f"lam must be nonnegative, got {self.lam}")
        if not (np.isfinite(self.kkt_tol) and self.kkt_tol > 0):
            raise DomainError(f"kkt_tol must be positive, got {self.kkt_tol}")
        if self.max_nonzeros is not None and self.max_nonzeros < 1:
            raise DomainError("max_nonzeros must be a positive integer")
        if self.max_steps is not None and self.max_steps < 1:
            raise DomainError("max_steps must be a positive integer")

    def steps_for(self, k: int) -> int:
        return self.max_steps if self.max_steps is not None else 10 * k


@dataclass(frozen=True)
class CodingProblem:
    k_yy: float
    k_dy: np.ndarray
    k_dd: np.ndarray

    def __post_init__(self):
        k_dy = np.ascontiguousarray(self.k_dy, dtype=np.float64).ravel()
        k_dd = np.ascontiguousarray(self.k_dd, dtype=np.float64)
        if k_dd.shape != (k_dy.size, k_dy.size):
            raise DomainError(f"k_dd shape {k_dd.shape} does not match k_dy length {k_dy.size}")
        if not (np.isfinite(self.k_yy) and self.k_yy > 0):
            raise DomainError(f"k_yy must be positive, got {self.k_yy}")
        if not (np.all(np.isfinite(k_dy)) and np.all(np.isfinite(k_dd))):
            raise DomainError("kernel values must be finite")
        if k_dd.size and np.max(np.abs(k_dd - k_dd.T)) > 1e-10 * max(1.0, np.max(np.abs(k_dd))):
            raise DomainError("k_dd is not symmetric")
        object.__setattr__(self, "k_yy", float(self.k_yy))
        object.__setattr__(self, "k_dy", k_dy)
        object.__setattr__(self, "k_dd", k_dd)

    @property
    def size(self) -> int:
        return self.k_dy.size


@dataclass(frozen=True)
class SparseCode:
    coefficients: np.ndarray
    support: tuple[int, ...]
    objective_value: float
    residual_sq: float


# --------------------------------------------------------------------------
# feature-sign search (compiled)


@njit(cache=True)
def _restricted_objective(Gaa, ba, kyy, lam, z):
    return kyy - 2.0 * np.dot(z, ba) + np.dot(z, np.dot(Gaa, z)) + lam * np.sum(np.abs(z))


@njit(cache=True)
def _feature_sign(G, b, kyy, lam, act_tol, nz_tol, max_steps, max_nonzeros, x):
    K = b.shape[0]
    for j in range(K):
        x[j] = 0.0
    theta = np.zeros(K)
    active = np.zeros(K, dtype=np.bool_)
    steps = 0
    while True:
        grad = 2.0 * (np.dot(G, x) - b)
        nnz = 0
        for j in range(K):
            if active[j]:
                nnz += 1
        best = -1
        best_val = 0.0
        for j in range(K):
            if not active[j]:
                v = abs(grad[j])
                if v > best_val:
                    best = j
                    best_val = v
        if best < 0 or best_val <= lam + act_tol:
            return _OK
        if max_nonzeros > 0 and nnz >= max_nonzeros:
            return _CAPPED
        theta[best] = -1.0 if grad[best] > 0 else 1.0
        active[best] = True

        while True:
            steps += 1
            if steps > max_steps:
                return _BUDGET
            n_act = 0
            for j in range(K):
                if active[j]:
                    n_act += 1
            idx = np.empty(n_act, dtype=np.int64)
            p = 0
            for j in range(K):
                if active[j]:
                    idx[p] = j
                    p += 1
            Gaa = np.empty((n_act, n_act))
            ba = np.empty(n_act)
            rhs = np.empty(n_act)
            xcur = np.empty(n_act)
            for r in range(n_act):
                ba[r] = b[idx[r]]
                rhs[r] = b[idx[r]] - 0.5 * lam * theta[idx[r]]
                xcur[r] = x[idx[r]]
                for c in range(n_act):
                    Gaa[r, c] = G[idx[r], idx[c]]
            xnew = np.linalg.lstsq(Gaa, rhs)[0]

            # discrete line search: the full step and every zero crossing on the way
            best_z = xnew.copy()
            best_f = _restricted_objective(Gaa, ba, kyy, lam, xnew)
            for r in range(n_act):
                if xcur[r] * xnew[r] < 0.0:
                    t = xcur[r] / (xcur[r] - xnew[r])
                    z = xcur + t * (xnew - xcur)
                    z[r] = 0.0
                    fz = _restricted_objective(Gaa, ba, kyy, lam, z)
                    if fz < best_f:
                        best_f = fz
                        best_z = z
            for r in range(n_act):
                j = idx[r]
                x[j] = best_z[r]
                if x[j] == 0.0:
                    active[j] = False
                    theta[j] = 0.0
                else:
                    theta[j] = 1.0 if x[j] > 0.0 else -1.0

            grad = 2.0 * (np.dot(G, x) - b)
            optimal = True
            for j in range(K):
                if active[j] and abs(grad[j] + lam * theta[j]) > nz_tol:
                    optimal = False
                    break
            if optimal:
                break


@njit(cache=True, parallel=True)
def _feature_sign_batch(G, B, kyy, lam, act_tol, nz_tol, max_steps, max_nonzeros, X, status):
    n = B.shape[0]
    for i in prange(n):
        status[i] = _feature_sign(G, B[i], kyy[i], lam, act_tol, nz_tol, max_steps,
                                  max_nonzeros, X[i])


def _tolerances(cfg: SolverConfig) -> tuple[float, float]:
    # activation margin and inner optimality tolerance sit well inside the KKT certificate
    return 0.1 * cfg.kkt_tol, 1e-3 * cfg.kkt_tol


def _check_dictionary_psd(k_dd: np.ndarray) -> None:
    if k_dd.size and min_eigenvalue(k_dd) < -PSD_TOL:
        raise DomainError("k_dd is not positive semidefinite within tolerance")


# --------------------------------------------------------------------------
# public API


def residual_sq(problem: CodingProblem, x) -> float:
    """Squared feature-space residual ||phi(y) - phi(D) x||^2 from kernel values."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size != problem.size:
        raise DomainError(f"code length {x.size} does not match dictionary size {problem.size}")
    r = problem.k_yy - 2.0 * float(x @ problem.k_dy) + float(x @ (problem.k_dd @ x))
    if r < 0.0:
        if r < -RESIDUAL_CLAMP:
            raise DomainError(f"negative squared residual {r:.3e}; kernel is not PSD")
        r = 0.0
    return r


def _make_code(problem: CodingProblem, x: np.ndarray, lam: float) -> SparseCode:
    r = residual_sq(problem, x)
    support = tuple(int(i) for i in np.flatnonzero(x))
    return SparseCode(coefficients=x, support=support,
                      objective_value=r + lam * float(np.sum(np.abs(x))), residual_sq=r)


def solve(problem: CodingProblem, cfg: SolverConfig = SolverConfig(), *,
          check_psd: bool = True) -> SparseCode:
    """Minimize the kernel sparse coding objective for one sample."""
    if check_psd:
        _check_dictionary_psd(problem.k_dd)
    coding_calls.add(1)
    k = problem.size
    x = np.zeros(k)
    if k == 0:
        return _make_code(problem, x, cfg.lam)
    act_tol, nz_tol = _tolerances(cfg)
    status = _feature_sign(problem.k_dd, problem.k_dy, problem.k_yy, float(cfg.lam), act_tol,
                           nz_tol, cfg.steps_for(k), cfg.max_nonzeros or 0, x)
    code = _make_code(problem, x, cfg.lam)
    if status == _BUDGET:
        raise SolverError(f"feature-sign search exceeded {cfg.steps_for(k)} steps", best=code)
    return code


def solve_batch(k_yy, k_dy, k_dd, cfg: SolverConfig = SolverConfig(), *,
                check_psd: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Code many samples against one dictionary.

    Parameters
    ----------
    k_yy : array of shape (n,) or scalar
        Self-similarities of the samples.
    k_dy : array of shape (n, K)
        Row ``i`` holds the atom correlations of sample ``i``.
    k_dd : array of shape (K, K)
        Atom Gram.

    Returns
    -------
    codes : array of shape (n, K)
    residuals : array of shape (n,)
        Squared feature-space residuals of each code.
    """
    B = np.ascontiguousarray(k_dy, dtype=np.float64)
    if B.ndim != 2:
        raise DomainError(f"k_dy must be 2-D, got shape {B.shape}")
    n, k = B.shape
    G = np.ascontiguousarray(k_dd, dtype=np.float64)
    if G.shape != (k, k):
        raise DomainError(f"k_dd shape {G.shape} does not match {k} atoms")
    kyy = np.ascontiguousarray(np.broadcast_to(np.asarray(k_yy, dtype=np.float64), (n,)))
    if np.any(kyy <= 0) or not np.all(np.isfinite(B)):
        raise DomainError("k_yy must be positive and k_dy finite")
    if check_psd:
        _check_dictionary_psd(G)
    coding_calls.add(n)
    X = np.zeros((n, k))
    status = np.zeros(n, dtype=np.int64)
    if n and k:
        act_tol, nz_tol = _tolerances(cfg)
        _feature_sign_batch(G, B, kyy, float(cfg.lam), act_tol, nz_tol, cfg.steps_for(k),
                            cfg.max_nonzeros or 0, X, status)
    res = kyy - 2.0 * np.einsum("ij,ij->i", X, B) + np.einsum("ij,ij->i", X @ G, X)
    if np.any(res < -RESIDUAL_CLAMP):
        raise DomainError("negative squared residual; kernel is not PSD")
    res = np.maximum(res, 0.0)
    failed = np.flatnonzero(status == _BUDGET)
    if failed.size:
        raise SolverError(f"{failed.size} of {n} problems exceeded the step budget",
                          best=(X, res))
    return X, res


def kkt_violation(problem: CodingProblem, x, lam: float) -> float:
    """Largest violation of the l1 stationarity conditions at ``x``."""
    x = np.asarray(x, dtype=np.float64).ravel()
    grad = -2.0 * problem.k_dy + 2.0 * (problem.k_dd @ x)
    nz = x != 0
    v_nz = np.abs(grad[nz] + lam * np.sign(x[nz]))
    v_z = np.abs(grad[~nz]) - lam
    worst = 0.0
    if v_nz.size:
        worst = max(worst, float(v_nz.max()))
    if v_z.size:
        worst = max(worst, float(v_z.max()))
    return worst


def check_kkt(problem: CodingProblem, x, lam: float, tol: float = 1e-6) -> bool:
    return kkt_violation(problem, x, lam) <= tol


def reconstruction_curve(problem: CodingProblem, max_s: int) -> list[tuple[int, float]]:
    """Residual after greedy support growth with an unpenalized refit, for s = 1..max_s.

    At each step the atom most correlated with the current feature-space residual
    joins the support and the coefficients are refit by least squares.
    """
    k = problem.size
    if max_s < 1 or max_s > k:
        raise DomainError(f"max_s must lie in 1..{k}, got {max_s}")
    G, b = problem.k_dd, problem.k_dy
    support: list[int] = []
    x = np.zeros(k)
    curve = []
    prev = problem.k_yy
    for s in range(1, max_s + 1):
        corr = b - G @ x
        corr_abs = np.abs(corr)
        corr_abs[support] = -np.inf
        support.append(int(np.argmax(corr_abs)))
        idx = np.array(support)
        coef = np.linalg.lstsq(G[np.ix_(idx, idx)], b[idx], rcond=None)[0]
        x = np.zeros(k)
        x[idx] = coef
        err = residual_sq(problem, x)
        # nested supports cannot do worse; absorb least-squares rounding only
        if prev < err <= prev + 1e-12 * max(1.0, problem.k_yy):
            err = prev
        curve.append((s, err))
        prev = err
    return curve

