"""Training and segmentation pipelines built on kernel sparse codes.

KSCA (automated) learns one dictionary on the Hadamard product of intensity and
location kernels and classifies every pixel's code with a linear SVM.
KSCSA (semi-automated) learns separate tumor and non-tumor dictionaries on
intensity alone and labels each pixel inside a user ROI by comparing its
reconstruction errors under the two dictionaries.

Pixel locations are mapped onto a fixed reference grid (``REFERENCE_SHAPE``)
before the location kernel is applied, so images of different sizes share one
coordinate frame.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from . import classify, kklines, ksc
from .classify import ErrorClassifier, LinearClassifier
from .errors import DomainError, ParseError
from .imaging import PixelSample, TrainingCorpus, as_image, as_mask, sample_pixels
from .kernels import (EnsembleConfig, KernelConfig, cross_intensity, cross_location, fuse,
                      intensity_table)
from .kklines import KernelDictionary, config_to_dict, load_arrays, save_arrays

REFERENCE_SHAPE = (256, 256)
KSCA_FORMAT = "kernseg-ksca/1"
KSCSA_FORMAT = "kernseg-kscsa/1"
_CHUNK = 4096


class _PixelCounter(ksc.CallCounter):
    """Pixels coded by a segmentation call (one per pixel, whatever the number of dictionaries)."""


pixel_codings = _PixelCounter()


def normalized_locations(rows, cols, shape) -> np.ndarray:
    """Map pixel centres of an image of ``shape`` onto the reference grid."""
    h, w = shape
    rh, rw = REFERENCE_SHAPE
    r = (np.asarray(rows, dtype=np.float64) + 0.5) * (rh / h) - 0.5
    c = (np.asarray(cols, dtype=np.float64) + 0.5) * (rw / w) - 0.5
    return np.column_stack([r, c])


def _sample_ref(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class KscaModel:
    dictionary: KernelDictionary  # carries training intensities and locations
    classifier: LinearClassifier
    kernel_cfg: KernelConfig
    ensemble_cfg: EnsembleConfig
    solver_cfg: ksc.SolverConfig = ksc.SolverConfig()


@dataclass(frozen=True)
class KscsaModel:
    dict_tumor: KernelDictionary
    dict_nontumor: KernelDictionary
    kernel_cfg: KernelConfig
    epsilon: float | None = None
    solver_cfg: ksc.SolverConfig = ksc.SolverConfig()

    def with_epsilon(self, epsilon: float) -> "KscsaModel":
        return replace(self, epsilon=float(epsilon))


# ------------------------------------------------------------------- KSCA

def _ensemble_gram(intensities, locations, kernel_cfg, ensemble_cfg):
    from .kernels import KernelMatrix

    k_i = KernelMatrix(cross_intensity(intensities, intensities, kernel_cfg), kind="intensity")
    k_l = KernelMatrix(cross_location(locations, locations, ensemble_cfg), kind="location")
    return fuse([k_i, k_l], ensemble_cfg)


def train_ksca(corpus: TrainingCorpus, kernel_cfg: KernelConfig = KernelConfig(),
               ensemble_cfg: EnsembleConfig = EnsembleConfig(), k: int = 256, seed: int = 0,
               solver_cfg: ksc.SolverConfig = ksc.SolverConfig(), reg_c: float = 1.0,
               max_iters: int = 100) -> KscaModel:
    """Learn the ensemble-kernel dictionary and the SVM on its codes.

    ``corpus.sample_budget`` pixels are drawn, half tumor and half non-tumor.
    """
    if ensemble_cfg.fusion != "hadamard":
        warnings.warn("KSCA is defined with Hadamard fusion; using the configured rule anyway",
                      stacklevel=2)
    tumor_n, normal_n = corpus.class_sizes()
    if tumor_n == 0:
        raise DomainError("corpus has no tumor pixels")
    if normal_n == 0:
        raise DomainError("corpus has no non-tumor pixels")
    sample = sample_pixels(corpus, corpus.sample_budget // 2, seed)
    shapes = [corpus.images[i].shape for i in range(len(corpus))]
    locs = np.empty((len(sample), 2))
    for i in np.unique(sample.image_index):
        sel = sample.image_index == i
        locs[sel] = normalized_locations(sample.locations[sel, 0], sample.locations[sel, 1], shapes[i])
    intens = sample.intensities.astype(np.float64)

    gram = _ensemble_gram(intens, locs, kernel_cfg, ensemble_cfg)
    ref = _sample_ref(sample.intensities, locs)
    dictionary, _, _ = kklines.learn(gram, k, init_seed=seed, max_iters=max_iters, train_ref=ref)
    dictionary = replace(dictionary, intensities=sample.intensities.copy(), locations=locs)

    k_dy = dictionary.atom_correlations(gram.entries)
    codes, _ = ksc.solve_batch(np.diag(gram.entries), k_dy, dictionary.atom_gram, solver_cfg)
    clf = classify.svm_train(codes, sample.labels, reg_c=reg_c, seed=seed)
    return KscaModel(dictionary, clf, kernel_cfg, ensemble_cfg, solver_cfg)


def _ensemble_correlations(model: KscaModel, image: np.ndarray, flat: np.ndarray):
    """(n, T) Hadamard ensemble kernel between the selected pixels and the training pixels.

    Narrow neighborhoods go through a KD-tree and return a sparse matrix; when
    the neighborhood covers a sizeable part of the grid a dense block is cheaper.
    """
    d = model.dictionary
    ecfg = model.ensemble_cfg
    rows, cols = np.divmod(flat, image.shape[1])
    locs = normalized_locations(rows, cols, image.shape)
    table = intensity_table(model.kernel_cfg)
    pix_int = image.ravel()[flat].astype(np.int64)
    train_int = d.intensities.astype(np.int64)
    window = (2 * ecfg.neighborhood_radius + 1) ** 2
    if window * 8 >= REFERENCE_SHAPE[0] * REFERENCE_SHAPE[1]:
        block = cross_location(locs, d.locations, ecfg)
        block *= table[pix_int[:, None] - train_int[None, :] + 255]
        return block
    pairs = cKDTree(locs).sparse_distance_matrix(cKDTree(d.locations), ecfg.neighborhood_radius,
                                                 p=np.inf, output_type="ndarray")
    i, j = pairs["i"], pairs["j"]
    delta = locs[i] - d.locations[j]
    vals = np.exp(-ecfg.gamma_location * (delta * delta).sum(axis=1))
    vals *= table[pix_int[i] - train_int[j] + 255]
    return sp.csr_matrix((vals, (i, j)), shape=(flat.size, d.n_train))


def ksca_codes(model: KscaModel, image, flat=None) -> np.ndarray:
    """Sparse codes of the selected pixels (all pixels by default)."""
    img = as_image(image)
    if model.ensemble_cfg.fusion != "hadamard":
        raise DomainError("pixel coding is implemented for Hadamard fusion only")
    flat = np.arange(img.size) if flat is None else np.asarray(flat)
    out = np.zeros((flat.size, model.dictionary.n_atoms))
    for start in range(0, flat.size, _CHUNK):
        part = flat[start:start + _CHUNK]
        k_dy = model.dictionary.atom_correlations(_ensemble_correlations(model, img, part))
        out[start:start + part.size], _ = ksc.solve_batch(1.0, k_dy, model.dictionary.atom_gram,
                                                          model.solver_cfg, check_psd=start == 0)
    pixel_codings.add(flat.size)
    return out


def ksca_decision(model: KscaModel, image) -> np.ndarray:
    """SVM decision value per pixel; pixels with an all-zero code get -inf."""
    img = as_image(image)
    codes = ksca_codes(model, img)
    dec = classify.svm_decision(model.classifier, codes)
    # a zero code means no atom explains the pixel at all: never call it tumor
    dec[~codes.any(axis=1)] = -np.inf
    return dec.reshape(img.shape)


def segment_ksca(model: KscaModel, image) -> np.ndarray:
    return ksca_decision(model, image) >= 0.0


# ------------------------------------------------------------------ KSCSA

def train_kscsa(corpus: TrainingCorpus, kernel_cfg: KernelConfig = KernelConfig(), k: int = 256,
                per_class_budget: int = 10000, seed: int = 0,
                solver_cfg: ksc.SolverConfig = ksc.SolverConfig(),
                max_iters: int = 100) -> KscsaModel:
    """Learn tumor and non-tumor intensity dictionaries. ``epsilon`` is left unset."""
    tumor_n, normal_n = corpus.class_sizes()
    if tumor_n == 0:
        raise DomainError("corpus has no tumor pixels")
    if normal_n == 0:
        raise DomainError("corpus has no non-tumor pixels")
    sample = sample_pixels(corpus, per_class_budget, seed)
    dicts = []
    for label in (classify.TUMOR, classify.NON_TUMOR):
        vals = sample.intensities[sample.labels == label]
        if k > vals.size:
            raise DomainError(f"{k} atoms but only {vals.size} training pixels of class {label:+d}")
        gram = _intensity_gram(vals, kernel_cfg)
        d, _, _ = kklines.learn(gram, k, init_seed=seed, max_iters=max_iters, train_ref=_sample_ref(vals))
        dicts.append(replace(d, intensities=vals.copy()))
    return KscsaModel(dicts[0], dicts[1], kernel_cfg, None, solver_cfg)


def _intensity_gram(values, cfg):
    from .kernels import KernelMatrix

    # 8-bit intensities: index the difference table instead of re-evaluating exp
    v = np.asarray(values, dtype=np.int64)
    g = intensity_table(cfg)[v[:, None] - v[None, :] + 255]
    return KernelMatrix(g, kind="intensity")


def _intensity_correlations(d: KernelDictionary, cfg: KernelConfig) -> np.ndarray:
    """(256, K) atom correlations for every possible 8-bit intensity."""
    v = np.arange(256)
    sample_kernel = intensity_table(cfg)[v[:, None] - d.intensities.astype(np.int64)[None, :] + 255]
    return d.atom_correlations(sample_kernel)


def kscsa_errors(model: KscsaModel, image, roi) -> tuple[np.ndarray, np.ndarray]:
    """Feature-space residual norms (E_N, E_T) for every ROI pixel, in raster order."""
    img = as_image(image)
    roi = as_mask(roi, img.shape)
    if not roi.any():
        raise DomainError("empty ROI")
    vals = img[roi].astype(np.int64)
    errors = []
    for d in (model.dict_nontumor, model.dict_tumor):
        lookup = _intensity_correlations(d, model.kernel_cfg)
        res = np.empty(vals.size)
        for start in range(0, vals.size, _CHUNK):
            part = vals[start:start + _CHUNK]
            _, res[start:start + part.size] = ksc.solve_batch(1.0, lookup[part], d.atom_gram,
                                                              model.solver_cfg, check_psd=start == 0)
        errors.append(np.sqrt(res))
    pixel_codings.add(vals.size)
    return errors[0], errors[1]


def kscsa_difference(model: KscsaModel, image, roi) -> np.ndarray:
    """E_N - E_T on the ROI, NaN elsewhere."""
    img = as_image(image)
    roi = as_mask(roi, img.shape)
    e_n, e_t = kscsa_errors(model, img, roi)
    out = np.full(img.shape, np.nan)
    out[roi] = e_n - e_t
    return out


def segment_kscsa(model: KscsaModel, image, roi, epsilon: float | None = None) -> np.ndarray:
    """Tumor mask inside ``roi``; pixels outside the ROI are never tumor."""
    eps = model.epsilon if epsilon is None else epsilon
    if eps is None:
        raise DomainError("model has no epsilon; run sweep_epsilon or pass one")
    diff = kscsa_difference(model, image, roi)
    return classify.error_classify_map(np.nan_to_num(diff, nan=-np.inf), 0.0, ErrorClassifier(float(eps)))


@dataclass(frozen=True)
class EpsilonSweep:
    grid: np.ndarray
    acc: np.ndarray  # (n_eps, n_images)
    cr: np.ndarray
    tumor_counts: np.ndarray
    best_epsilon: float

    def rows(self):
        for e, a, c, n in zip(self.grid, self.acc, self.cr, self.tumor_counts):
            yield float(e), float(a.mean()), float(c.mean()), int(n.sum())


def default_grid(diffs, n: int = 21) -> np.ndarray:
    lo = min(float(np.nanmin(d)) for d in diffs)
    hi = max(float(np.nanmax(d)) for d in diffs)
    return np.linspace(lo, hi, n)


def sweep_epsilon(model: KscsaModel, images, masks, rois, grid=None) -> EpsilonSweep:
    """Score every threshold on a validation set and pick the best.

    The best threshold maximizes mean CR, then mean Acc; remaining ties go to
    the earliest grid entry.
    """
    from .metrics import score

    if len(images) == 0 or len(images) != len(masks) or len(images) != len(rois):
        raise DomainError("need matching, nonempty lists of images, masks and ROIs")
    diffs = [kscsa_difference(model, im, roi) for im, roi in zip(images, rois)]
    grid = default_grid(diffs) if grid is None else np.asarray(grid, dtype=np.float64).ravel()
    if grid.size == 0:
        raise DomainError("empty epsilon grid")
    acc = np.zeros((grid.size, len(images)))
    cr = np.zeros_like(acc)
    counts = np.zeros((grid.size, len(images)), dtype=np.int64)
    for j, (d, truth) in enumerate(zip(diffs, masks)):
        filled = np.nan_to_num(d, nan=-np.inf)
        for i, eps in enumerate(grid):
            pred = classify.error_classify_map(filled, 0.0, ErrorClassifier(float(eps)))
            rep = score(pred, truth)
            acc[i, j], cr[i, j], counts[i, j] = rep.acc, rep.cr, int(pred.sum())
    order = np.lexsort((-acc.mean(axis=1), -cr.mean(axis=1)))
    return EpsilonSweep(grid, acc, cr, counts, float(grid[order[0]]))


# -------------------------------------------------------------- artifacts

def _solver_dict(cfg: ksc.SolverConfig) -> dict:
    return {"lam": cfg.lam, "kkt_tol": cfg.kkt_tol, "max_nonzeros": cfg.max_nonzeros,
            "max_steps": cfg.max_steps}


def save_ksca(path, model: KscaModel) -> None:
    arrays = kklines.dictionary_arrays(model.dictionary)
    arrays["svm_weights"] = model.classifier.weights
    meta = {
        "format": KSCA_FORMAT,
        "train_ref": model.dictionary.train_ref,
        "kernel": config_to_dict(model.kernel_cfg),
        "ensemble": config_to_dict(model.ensemble_cfg),
        "solver": _solver_dict(model.solver_cfg),
        # repr keeps all 17 significant digits of the float
        "svm_bias": repr(model.classifier.bias),
        "svm_reg_c": model.classifier.reg_c,
        "reference_shape": list(REFERENCE_SHAPE),
    }
    save_arrays(path, arrays, meta)


def load_ksca(path) -> KscaModel:
    arrays, meta = load_arrays(path, KSCA_FORMAT)
    d = kklines.dictionary_from_arrays(arrays, meta["train_ref"])
    if d.intensities is None or d.locations is None or "svm_weights" not in arrays:
        raise ParseError(f"{path}: incomplete KSCA model", 0)
    clf = LinearClassifier(arrays["svm_weights"], float(meta["svm_bias"]), meta["svm_reg_c"])
    return KscaModel(d, clf, KernelConfig(**meta["kernel"]), EnsembleConfig(**meta["ensemble"]),
                     ksc.SolverConfig(**meta["solver"]))


def save_kscsa(path, model: KscsaModel) -> None:
    arrays = kklines.dictionary_arrays(model.dict_tumor, "tumor_")
    arrays.update(kklines.dictionary_arrays(model.dict_nontumor, "nontumor_"))
    meta = {
        "format": KSCSA_FORMAT,
        "tumor_ref": model.dict_tumor.train_ref,
        "nontumor_ref": model.dict_nontumor.train_ref,
        "kernel": config_to_dict(model.kernel_cfg),
        "solver": _solver_dict(model.solver_cfg),
        "epsilon": None if model.epsilon is None else repr(model.epsilon),
    }
    save_arrays(path, arrays, meta)


def load_kscsa(path) -> KscsaModel:
    arrays, meta = load_arrays(path, KSCSA_FORMAT)
    dt = kklines.dictionary_from_arrays(arrays, meta["tumor_ref"], "tumor_")
    dn = kklines.dictionary_from_arrays(arrays, meta["nontumor_ref"], "nontumor_")
    if dt.intensities is None or dn.intensities is None:
        raise ParseError(f"{path}: dictionaries lack training intensities", 0)
    eps = meta.get("epsilon")
    return KscsaModel(dt, dn, KernelConfig(**meta["kernel"]), None if eps is None else float(eps),
                      ksc.SolverConfig(**meta["solver"]))
