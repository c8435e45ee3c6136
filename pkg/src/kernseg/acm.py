"""Chan-Vese two-phase level-set segmentation, used as a baseline.

The level set is positive inside the region. The energy is evaluated on the
sharp partition ``phi > 0``::

    E = sum_in (I - c1)^2 + sum_out (I - c2)^2 + mu * perimeter

where the perimeter counts 4-neighbour label changes, scaled by pi/4 to
undo the bias of the city-block length. A step is kept only if it does not
raise the energy. A rejected step halves the step size, a decrease lets it
grow back. Evolution stops after ``window`` consecutive rejected or
non-improving region changes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.ndimage import distance_transform_edt

from .errors import DomainError, NumericalError
from .imaging import as_image, as_mask


@dataclass(frozen=True)
class AcmConfig:
    max_iters: int = 500
    reinit_every: int = 25
    step_size: float = 1.0  # largest change of phi per iteration, in pixels
    window: int = 15
    mu: float = 0.1 * 255.0 ** 2
    heaviside_eps: float = 1.0

    def __post_init__(self):
        for name in ("max_iters", "reinit_every", "window"):
            if int(getattr(self, name)) < 1:
                raise DomainError(f"{name} must be a positive integer")
        for name in ("step_size", "mu", "heaviside_eps"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise DomainError(f"{name} must be positive")


@dataclass(frozen=True)
class LevelSet:
    phi: np.ndarray
    iteration: int = 0

    @property
    def mask(self) -> np.ndarray:
        return self.phi > 0


def mask_to_sdf(mask) -> LevelSet:
    """Signed Euclidean distance to the region boundary, positive inside.

    Distances are measured to the pixel-edge boundary, so a pixel next to the
    boundary gets magnitude 0.5.
    """
    m = as_mask(mask)
    if not m.any() or m.all():
        raise DomainError("mask must be neither empty nor full")
    inside = distance_transform_edt(m)
    outside = distance_transform_edt(~m)
    return LevelSet(np.where(m, inside - 0.5, -(outside - 0.5)))


def perimeter(mask) -> float:
    m = as_mask(mask)
    edges = np.count_nonzero(m[1:, :] != m[:-1, :]) + np.count_nonzero(m[:, 1:] != m[:, :-1])
    return 0.25 * math.pi * edges


def region_means(image, inside) -> tuple[float, float]:
    """Mean intensity inside and outside; an empty side falls back to the global mean."""
    img = np.asarray(image, dtype=np.float64)
    n_in = int(np.count_nonzero(inside))
    total = img.sum()
    s_in = img[inside].sum()
    mean = total / img.size
    c1 = s_in / n_in if n_in else mean
    c2 = (total - s_in) / (img.size - n_in) if n_in < img.size else mean
    return float(c1), float(c2)


def cv_energy(image, phi, mu: float = AcmConfig.mu) -> float:
    img = as_image(image).astype(np.float64)
    p = phi.phi if isinstance(phi, LevelSet) else np.asarray(phi, dtype=np.float64)
    if p.shape != img.shape:
        raise DomainError(f"level set shape {p.shape} does not match image {img.shape}")
    inside = p > 0
    c1, c2 = region_means(img, inside)
    data = np.sum(np.where(inside, (img - c1) ** 2, (img - c2) ** 2))
    return float(data + mu * perimeter(inside))


def curvature(phi: np.ndarray) -> np.ndarray:
    """Curvature of the level lines (central differences, zero-flux borders), clipped to [-1, 1]."""
    p = np.pad(phi, 1, mode="edge")
    px = 0.5 * (p[1:-1, 2:] - p[1:-1, :-2])
    py = 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])
    pxx = p[1:-1, 2:] - 2 * phi + p[1:-1, :-2]
    pyy = p[2:, 1:-1] - 2 * phi + p[:-2, 1:-1]
    pxy = 0.25 * (p[2:, 2:] - p[2:, :-2] - p[:-2, 2:] + p[:-2, :-2])
    num = pxx * py * py - 2 * px * py * pxy + pyy * px * px
    # curvature above one per pixel is staircase noise, not geometry
    return np.clip(num / (px * px + py * py + 1e-8) ** 1.5, -1.0, 1.0)


@njit(cache=True)
def _sweep_distance(phi):
    h, w = phi.shape
    big = 1e30
    d = np.full((h, w), big)
    fixed = np.zeros((h, w), dtype=np.bool_)
    # interface pixels: distance to the linearly interpolated zero crossing
    for i in range(h):
        for j in range(w):
            p = phi[i, j]
            s = p > 0
            dx = big
            dy = big
            for di, dj in ((0, -1), (0, 1), (-1, 0), (1, 0)):
                ii = i + di
                jj = j + dj
                if ii < 0 or ii >= h or jj < 0 or jj >= w:
                    continue
                q = phi[ii, jj]
                if (q > 0) != s:
                    denom = abs(p - q)
                    t = abs(p) / denom if denom > 0 else 0.5
                    if di == 0:
                        dx = min(dx, t)
                    else:
                        dy = min(dy, t)
            if dx < big or dy < big:
                if dx < big and dy < big:
                    d[i, j] = 1.0 / math.sqrt(1.0 / max(dx, 1e-12) ** 2 + 1.0 / max(dy, 1e-12) ** 2)
                else:
                    d[i, j] = min(dx, dy)
                fixed[i, j] = True
    for _ in range(2):
        for order in range(4):
            for a in range(h):
                i = a if order < 2 else h - 1 - a
                for b in range(w):
                    j = b if order % 2 == 0 else w - 1 - b
                    if fixed[i, j]:
                        continue
                    u = big
                    if i > 0:
                        u = d[i - 1, j]
                    if i < h - 1:
                        u = min(u, d[i + 1, j])
                    v = big
                    if j > 0:
                        v = d[i, j - 1]
                    if j < w - 1:
                        v = min(v, d[i, j + 1])
                    if abs(u - v) >= 1.0:
                        new = min(u, v) + 1.0
                    else:
                        new = 0.5 * (u + v + math.sqrt(2.0 - (u - v) ** 2))
                    if new < d[i, j]:
                        d[i, j] = new
    out = np.empty((h, w))
    for i in range(h):
        for j in range(w):
            out[i, j] = d[i, j] if phi[i, j] > 0 else -d[i, j]
    return out


def reinitialize(phi) -> np.ndarray:
    """Signed distance with the same sign pattern, by fast sweeping."""
    p = np.ascontiguousarray(phi, dtype=np.float64)
    if not (p > 0).any() or (p > 0).all():
        return p.copy()
    return _sweep_distance(p)


def evolve(image, init, cfg: AcmConfig = AcmConfig()) -> tuple[np.ndarray, list[float]]:
    """Evolve the level set of ``init`` and return the final mask and the energy trace.

    The trace starts with the initial energy and lists every accepted step.
    """
    img = as_image(image).astype(np.float64)
    phi = mask_to_sdf(as_mask(init, img.shape)).phi
    energy = cv_energy(img.astype(np.uint8), phi, cfg.mu)
    trace = [energy]
    dt = cfg.step_size
    stall = 0
    accepted = 0
    for _ in range(cfg.max_iters):
        inside = phi > 0
        c1, c2 = region_means(img, inside)
        force = (img - c2) ** 2 - (img - c1) ** 2
        delta = cfg.heaviside_eps / (math.pi * (cfg.heaviside_eps ** 2 + phi * phi))
        speed = delta * (force + cfg.mu * curvature(phi))
        top = float(np.max(np.abs(speed)))
        if not np.isfinite(top):
            raise NumericalError("level-set speed is not finite")
        if top == 0.0:
            break
        candidate = phi + (dt / top) * speed
        if not np.all(np.isfinite(candidate)):
            raise NumericalError("level set diverged")
        if not candidate.any() or not (candidate > 0).any() or (candidate > 0).all():
            new_energy = np.inf
        else:
            new_energy = cv_energy(image, candidate, cfg.mu)
        if new_energy <= energy:
            if new_energy < energy:
                stall = 0
                dt = min(cfg.step_size, 2.0 * dt)
            elif np.any((candidate > 0) != inside):
                # the region moved without lowering the energy
                stall += 1
            phi, energy = candidate, new_energy
            trace.append(energy)
            accepted += 1
            if accepted % cfg.reinit_every == 0:
                phi = reinitialize(phi)
        else:
            dt *= 0.5
            stall += 1
        if stall >= cfg.window:
            break
    return phi > 0, trace
