"""RBF kernels on pixel intensity and location, ensemble fusion and Mercer checks.

All Gram matrices are dense ``float64`` arrays wrapped in :class:`KernelMatrix`.
Intensities stay on the raw 0-255 scale unless ``intensity_scale`` says otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import DomainError, ValidationError

PSD_TOL = 1e-8
SYMMETRY_TOL = 1e-12
# eigvalsh up to this size, Cholesky of (m + tol*I) above it
_EIGEN_CHECK_MAX_N = 2000

_INTENSITY_SCALES = {"raw_0_255": 1.0, "unit_interval": 1.0 / 255.0}
_FUSIONS = ("hadamard", "weighted_sum")


@dataclass(frozen=True)
class KernelConfig:
    gamma_intensity: float = 0.3
    intensity_scale: str = "raw_0_255"
    distance_fn: str = "absolute_scalar"

    def __post_init__(self):
        if not (math.isfinite(self.gamma_intensity) and self.gamma_intensity > 0):
            raise DomainError(f"gamma_intensity must be positive, got {self.gamma_intensity}")
        if self.intensity_scale not in _INTENSITY_SCALES:
            raise DomainError(f"unknown intensity_scale {self.intensity_scale!r}")
        if self.distance_fn != "absolute_scalar":
            raise DomainError(f"intensity kernel supports only 'absolute_scalar', got {self.distance_fn!r}")

    @property
    def scale(self) -> float:
        return _INTENSITY_SCALES[self.intensity_scale]


@dataclass(frozen=True)
class EnsembleConfig:
    fusion: str = "hadamard"
    weights: tuple[float, ...] = ()
    gamma_location: float = 0.5
    neighborhood_radius: int = 5
    distance_fn: str = "euclidean"

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if self.fusion not in _FUSIONS:
            raise DomainError(f"unknown fusion {self.fusion!r}")
        if self.fusion == "weighted_sum":
            if any(not math.isfinite(w) or w < 0 for w in self.weights):
                raise DomainError("weighted_sum weights must be finite and nonnegative")
            if not any(w > 0 for w in self.weights):
                raise DomainError("weighted_sum needs at least one positive weight")
        if not (math.isfinite(self.gamma_location) and self.gamma_location > 0):
            raise DomainError(f"gamma_location must be positive, got {self.gamma_location}")
        if int(self.neighborhood_radius) != self.neighborhood_radius or self.neighborhood_radius < 0:
            raise DomainError("neighborhood_radius must be a nonnegative integer")
        if self.distance_fn != "euclidean":
            raise DomainError(f"location kernel supports only 'euclidean', got {self.distance_fn!r}")


@dataclass(frozen=True)
class KernelMatrix:
    """Symmetric Gram matrix. ``entries`` is made read-only on construction."""

    entries: np.ndarray
    kind: str = field(default="intensity")

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DomainError(f"kernel matrix must be square, got shape {m.shape}")
        if self.kind not in ("intensity", "location", "ensemble", "custom"):
            raise DomainError(f"unknown kernel kind {self.kind!r}")
        _check_symmetric(m)
        if m is self.entries:
            m = m.view()
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @property
    def n(self) -> int:
        return self.entries.shape[0]


def _check_symmetric(m: np.ndarray, tol: float = SYMMETRY_TOL) -> None:
    if m.size == 0:
        return
    scale = max(1.0, float(np.max(np.abs(m))))
    asym = float(np.max(np.abs(m - m.T)))
    if not asym <= tol * scale:
        raise DomainError(f"matrix is not symmetric (max |m - m.T| = {asym:.3e})")


def rbf_eval(a: float, b: float, gamma: float) -> float:
    """exp(-gamma * (a - b)**2) for two scalar intensities."""
    if not (math.isfinite(a) and math.isfinite(b)):
        raise DomainError("rbf_eval needs finite inputs")
    if not (math.isfinite(gamma) and gamma > 0):
        raise DomainError(f"gamma must be positive, got {gamma}")
    d = a - b
    return math.exp(-gamma * d * d)


def _as_intensities(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise DomainError("empty sample list")
    if not np.all(np.isfinite(x)):
        raise DomainError("intensities must be finite")
    return x


def _as_locations(locations) -> np.ndarray:
    loc = np.asarray(locations, dtype=np.float64)
    if loc.ndim != 2 or loc.shape[1] != 2:
        raise DomainError(f"locations must have shape (n, 2), got {loc.shape}")
    if loc.shape[0] == 0:
        raise DomainError("empty location list")
    if not np.all(np.isfinite(loc)):
        raise DomainError("locations must be finite")
    return loc


def cross_intensity(a, b, cfg: KernelConfig) -> np.ndarray:
    """Rectangular intensity kernel block K[i, j] = K(a_i, b_j)."""
    a = _as_intensities(a)
    b = _as_intensities(b)
    d = (a[:, None] - b[None, :]) * cfg.scale
    return np.exp(-cfg.gamma_intensity * (d * d))


def intensity_table(cfg: KernelConfig) -> np.ndarray:
    """Kernel values for every integer intensity difference -255..255.

    ``table[d + 255]`` equals ``cross_intensity`` for any pair of 8-bit intensities
    differing by ``d``, bit for bit.
    """
    d = np.arange(-255, 256, dtype=np.float64) * cfg.scale
    return np.exp(-cfg.gamma_intensity * (d * d))


def gram_intensity(samples, cfg: KernelConfig) -> KernelMatrix:
    x = _as_intensities(samples)
    return KernelMatrix(cross_intensity(x, x, cfg), kind="intensity")


def cross_location(a, b, cfg: EnsembleConfig) -> np.ndarray:
    """Truncated Gaussian location kernel between two location sets.

    Zero wherever the Chebyshev distance exceeds ``cfg.neighborhood_radius``.
    """
    a = _as_locations(a)
    b = _as_locations(b)
    dr = a[:, 0][:, None] - b[:, 0][None, :]
    dc = a[:, 1][:, None] - b[:, 1][None, :]
    k = np.exp(-cfg.gamma_location * (dr * dr + dc * dc))
    outside = np.maximum(np.abs(dr), np.abs(dc)) > cfg.neighborhood_radius
    k[outside] = 0.0
    return k


def gram_location(locations, cfg: EnsembleConfig) -> KernelMatrix:
    loc = _as_locations(locations)
    return KernelMatrix(cross_location(loc, loc, cfg), kind="location")


def fuse(matrices: Sequence[KernelMatrix], cfg: EnsembleConfig, *, check_psd: bool = True,
         tol: float = PSD_TOL) -> KernelMatrix:
    """Combine base Grams into an ensemble Gram (weighted sum or Hadamard product)."""
    if len(matrices) == 0:
        raise DomainError("fuse needs at least one matrix")
    arrays = [m.entries if isinstance(m, KernelMatrix) else np.asarray(m, dtype=np.float64)
              for m in matrices]
    shape = arrays[0].shape
    if any(a.shape != shape for a in arrays):
        raise DomainError(f"size mismatch: {[a.shape for a in arrays]}")

    if cfg.fusion == "weighted_sum":
        if len(cfg.weights) != len(arrays):
            raise DomainError(f"{len(cfg.weights)} weights for {len(arrays)} matrices")
        out = cfg.weights[0] * arrays[0]
        for w, a in zip(cfg.weights[1:], arrays[1:]):
            out += w * a
    else:
        out = arrays[0].copy()
        for a in arrays[1:]:
            out *= a

    result = KernelMatrix(out, kind="ensemble")
    if check_psd and not validate_psd(result, tol):
        raise ValidationError("fused kernel matrix is not positive semidefinite within tolerance")
    return result


def min_eigenvalue(m) -> float:
    entries = m.entries if isinstance(m, KernelMatrix) else np.asarray(m, dtype=np.float64)
    return float(scipy.linalg.eigvalsh(entries, subset_by_index=[0, 0], check_finite=False)[0])


def validate_psd(m, tol: float = PSD_TOL) -> bool:
    """True iff the smallest eigenvalue of ``m`` is at least ``-tol``.

    Small matrices use a symmetric eigensolver; large ones test whether
    ``m + tol*I`` admits a Cholesky factorization, which is equivalent and
    several times cheaper.
    """
    entries = m.entries if isinstance(m, KernelMatrix) else np.asarray(m, dtype=np.float64)
    if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
        raise DomainError(f"validate_psd needs a square matrix, got {entries.shape}")
    _check_symmetric(entries, tol=1e-10)
    n = entries.shape[0]
    if n == 0:
        return True
    if n <= _EIGEN_CHECK_MAX_N:
        return min_eigenvalue(entries) >= -tol
    shifted = entries + tol * np.eye(n)
    try:
        scipy.linalg.cholesky(shifted, lower=True, overwrite_a=True, check_finite=False)
    except np.linalg.LinAlgError:
        return False
    return True
