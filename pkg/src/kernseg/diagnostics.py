"""Small synthetic experiments on code discrimination and representation error."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import kklines, ksc
from .errors import DomainError
from .imaging import PhantomSpec, TrainingCorpus, gen_phantom, sample_pixels
from .kernels import KernelConfig, KernelMatrix, intensity_table
from .metrics import CorrelationReport, code_correlation_report


def blob_corpus(n_per_class: int, seed: int, n_classes: int = 3, dim: int = 2,
                separation: float = 4.0, spread: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Isotropic Gaussian blobs with centres on a circle of radius ``separation``."""
    rng = np.random.default_rng(seed)
    angles = 2 * np.pi * np.arange(n_classes) / n_classes
    centres = np.zeros((n_classes, dim))
    centres[:, 0] = separation * np.cos(angles)
    centres[:, 1 % dim] = separation * np.sin(angles)
    X = np.concatenate([c + spread * rng.standard_normal((n_per_class, dim)) for c in centres])
    y = np.repeat(np.arange(n_classes), n_per_class)
    return X, y


def rbf_vectors(a, b, gamma: float) -> np.ndarray:
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2 * a @ b.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


def correlation_experiment(seed: int = 0, n_per_class: int = 100, k: int = 9,
                           gamma: float = 0.25, lam: float = 0.1) -> CorrelationReport:
    """Learn a kernel dictionary on blob data, code a fresh draw, and correlate the codes.

    Block structure is clearest with a few atoms per class; with many atoms per
    class, same-class samples spread over disjoint atoms and intra-class
    correlation drops.
    """
    X, _ = blob_corpus(n_per_class, seed)
    Xt, yt = blob_corpus(n_per_class, seed + 1)
    gram = KernelMatrix(rbf_vectors(X, X, gamma), kind="custom")
    d, _, _ = kklines.learn(gram, k, init_seed=seed)
    k_dy = d.atom_correlations(rbf_vectors(Xt, X, gamma))
    codes, _ = ksc.solve_batch(1.0, k_dy, d.atom_gram, ksc.SolverConfig(lam=lam))
    return code_correlation_report(codes, yt)


@dataclass(frozen=True)
class CurveResult:
    curves: np.ndarray  # (n_samples, max_s) squared residuals
    sample_intensities: np.ndarray
    in_training: np.ndarray


def recon_curve_experiment(seed: int = 0, k: int = 256, max_s: int = 20, n_samples: int = 10,
                           budget: int = 2000, kernel_cfg: KernelConfig = KernelConfig(),
                           shape=(128, 128)) -> CurveResult:
    """Greedy reconstruction error against sparsity for phantom pixels.

    A non-tumor intensity dictionary is learned from a phantom; half the probe
    pixels come from its training set and half from a second phantom.
    """
    if max_s > k:
        raise DomainError("max_s cannot exceed the number of atoms")
    specs = [PhantomSpec(seed=seed, shape=shape, brain_center=(shape[0] / 2, shape[1] / 2),
                         brain_axes=(0.43 * shape[0], 0.36 * shape[1]),
                         tumor_center=(0.43 * shape[0], 0.58 * shape[1]),
                         tumor_radii=(0.1 * shape[0], 0.09 * shape[1])),
             PhantomSpec(seed=seed + 1, shape=shape, brain_center=(shape[0] / 2, shape[1] / 2),
                         brain_axes=(0.43 * shape[0], 0.36 * shape[1]),
                         tumor_center=(0.43 * shape[0], 0.58 * shape[1]),
                         tumor_radii=(0.1 * shape[0], 0.09 * shape[1]))]
    (im0, m0), (im1, _) = [gen_phantom(s) for s in specs]
    with warnings.catch_warnings():
        # only the non-tumor draw is used; a clamped tumor class does not matter
        warnings.simplefilter("ignore", UserWarning)
        sample = sample_pixels(TrainingCorpus([im0], [m0]), budget, seed)
    vals = sample.intensities[sample.labels < 0].astype(np.int64)
    table = intensity_table(kernel_cfg)
    gram = KernelMatrix(table[vals[:, None] - vals[None, :] + 255])
    k = min(k, vals.size)
    d, _, _ = kklines.learn(gram, k, init_seed=seed)

    rng = np.random.default_rng(seed)
    half = n_samples // 2
    probes = np.concatenate([rng.choice(vals, half, replace=False),
                             rng.choice(im1.ravel(), n_samples - half, replace=False)]).astype(np.int64)
    inside = np.arange(n_samples) < half
    curves = np.empty((n_samples, max_s))
    k_dy = d.atom_correlations(table[probes[:, None] - vals[None, :] + 255])
    for i in range(n_samples):
        problem = ksc.CodingProblem(1.0, k_dy[i], d.atom_gram)
        curves[i] = [e for _, e in ksc.reconstruction_curve(problem, max_s)]
    return CurveResult(curves, probes, inside)
