"""Kernel K-lines clustering: dictionary learning with one nonzero coefficient per sample.

Atoms live in feature space as combinations of training samples,
``phi(D) = phi(Y) A``, so everything is computed from the training Gram.
Each alternation assigns every sample to the atom with the largest absolute
correlation, then replaces each atom by the leading eigenvector direction of
its members' Gram.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import DegenerateClusterError, DegenerateDataError, DomainError, ParseError
from .kernels import EnsembleConfig, KernelConfig, KernelMatrix

FORMAT_VERSION = "kernseg-dictionary/1"
EIG_TOL = 1e-10
_ZERO_RESIDUAL = 1e-12


@dataclass(frozen=True)
class EigPair:
    value: float
    vector: np.ndarray


@dataclass(frozen=True)
class ClusterState:
    labels: np.ndarray  # atom index of every sample
    weights: np.ndarray  # signed nonzero coefficient of every sample
    objective: float
    n_atoms: int
    iterations: int = 0
    converged: bool = False

    @property
    def memberships(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.labels == c) for c in range(self.n_atoms)]


@dataclass(frozen=True)
class KernelDictionary:
    """Atoms as coefficient columns over a training set.

    ``intensities`` / ``locations`` hold the training samples the columns of
    ``coeffs`` refer to. ``train_gram`` is kept only in memory after learning.
    """

    coeffs: np.ndarray  # T x K
    atom_gram: np.ndarray  # K x K
    train_ref: str = ""
    intensities: np.ndarray | None = None
    locations: np.ndarray | None = None
    train_gram: KernelMatrix | None = field(default=None, repr=False, compare=False)

    @property
    def n_train(self) -> int:
        return self.coeffs.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.coeffs.shape[1]

    def sparse_coeffs(self) -> sp.csr_matrix:
        return sp.csr_matrix(self.coeffs)

    def atom_correlations(self, sample_kernel) -> np.ndarray:
        """K_Dy for a block of samples: ``sample_kernel`` is (n, T), result is (n, K)."""
        a = self.sparse_coeffs()
        if sp.issparse(sample_kernel):
            return np.asarray((sample_kernel @ a).todense())
        return np.asarray((a.T @ np.asarray(sample_kernel).T).T)


def leading_eigenpair(m, tol: float = EIG_TOL) -> EigPair:
    """Largest eigenvalue and its unit eigenvector, first nonzero entry positive."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
        raise DomainError(f"leading_eigenpair needs a nonempty square matrix, got {m.shape}")
    if np.max(np.abs(m - m.T)) > 1e-10 * max(1.0, np.max(np.abs(m))):
        raise DomainError("leading_eigenpair needs a symmetric matrix")
    n = m.shape[0]
    if n == 1:
        return EigPair(float(m[0, 0]), np.ones(1))
    w, v = scipy.linalg.eigh(m, subset_by_index=[n - 1, n - 1], check_finite=False)
    value = float(w[0])
    vec = v[:, 0]
    vec = vec / np.linalg.norm(vec)
    nz = np.flatnonzero(np.abs(vec) > 1e-14)
    if nz.size and vec[nz[0]] < 0:
        vec = -vec
    resid = np.linalg.norm(m @ vec - value * vec)
    if resid > tol * max(np.linalg.norm(m), np.finfo(float).tiny):
        raise DomainError(f"eigensolver residual {resid:.3e} exceeds tolerance")
    return EigPair(value, vec)


def _gram_array(gram) -> np.ndarray:
    return gram.entries if isinstance(gram, KernelMatrix) else np.asarray(gram, dtype=np.float64)


def update_cluster(gram, members) -> tuple[EigPair, np.ndarray]:
    """Best rank-1 atom for one cluster.

    Returns the leading eigenpair of the members' Gram and the coefficient
    column ``a_k = E_k v / sigma`` (length T), whose atom has unit norm.
    """
    g = _gram_array(gram)
    members = np.asarray(members, dtype=np.int64)
    if members.size == 0:
        raise DomainError("empty cluster")
    pair = leading_eigenpair(g[np.ix_(members, members)])
    if pair.value <= _ZERO_RESIDUAL:
        raise DegenerateClusterError(f"cluster of {members.size} samples has zero leading eigenvalue")
    col = np.zeros(g.shape[0])
    col[members] = pair.vector / np.sqrt(pair.value)
    return pair, col


def _correlations(g: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    a = sp.csc_matrix(coeffs)
    # (A^T K)^T == K A for symmetric K; sparse-dense product costs nnz(A) * T
    return np.asarray((a.T @ g).T)


def _label_and_weight(corr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    labels = np.argmax(np.abs(corr), axis=1)
    weights = corr[np.arange(corr.shape[0]), labels]
    return labels, weights


def assign(gram, dictionary: KernelDictionary) -> ClusterState:
    """Assign every training sample to the atom of largest absolute correlation."""
    g = _gram_array(gram)
    if g.shape[0] != dictionary.n_train:
        raise DomainError(f"Gram of size {g.shape[0]} for a dictionary over {dictionary.n_train} samples")
    labels, weights = _label_and_weight(_correlations(g, dictionary.coeffs))
    objective = float(np.sum(np.diag(g) - weights ** 2))
    return ClusterState(labels=labels, weights=weights, objective=max(objective, 0.0),
                        n_atoms=dictionary.n_atoms)


def farthest_point_seeds(g: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Greedy farthest-point selection in kernel distance, started from a seeded index."""
    t = g.shape[0]
    rng = np.random.default_rng(seed)
    diag = np.diag(g)
    first = int(rng.integers(t))
    chosen = [first]
    dmin = diag + diag[first] - 2.0 * g[first]
    if k > 1 and np.max(dmin) <= _ZERO_RESIDUAL:
        raise DegenerateDataError("all training samples coincide in feature space")
    while len(chosen) < k:
        nxt = int(np.argmax(dmin))
        chosen.append(nxt)
        dmin = np.minimum(dmin, diag + diag[nxt] - 2.0 * g[nxt])
    return np.array(chosen)


def _atom_gram(g: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    a = sp.csc_matrix(coeffs)
    ag = np.asarray(a.T @ _correlations(g, coeffs))
    return 0.5 * (ag + ag.T)


def learn(gram, k: int, init_seed: int = 0, max_iters: int = 100,
          train_ref: str = "") -> tuple[KernelDictionary, ClusterState, list[float]]:
    """Learn a K-atom kernel dictionary by kernel K-lines clustering.

    Returns the dictionary, the final cluster state and the objective after
    every cluster update. Iteration stops once an assignment reproduces the
    previous memberships without any empty-cluster repair.
    """
    g = _gram_array(gram)
    t = g.shape[0]
    if k < 1 or k > t:
        raise DomainError(f"k must lie in 1..{t}, got {k}")
    if max_iters < 1:
        raise DomainError("max_iters must be positive")
    diag = np.diag(g)

    seeds = farthest_point_seeds(g, k, init_seed)
    coeffs = np.zeros((t, k))
    coeffs[seeds, np.arange(k)] = 1.0 / np.sqrt(diag[seeds])

    trace: list[float] = []
    prev = None
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        labels, weights = _label_and_weight(_correlations(g, coeffs))
        repaired = False
        for c in range(k):
            if np.any(labels == c):
                continue
            resid = diag - weights ** 2
            m = int(np.argmax(resid))
            if resid[m] <= _ZERO_RESIDUAL:
                continue
            coeffs[:, c] = 0.0
            coeffs[m, c] = 1.0 / np.sqrt(diag[m])
            labels[m] = c
            weights[m] = np.sqrt(diag[m])
            repaired = True
        if prev is not None and not repaired and np.array_equal(labels, prev):
            converged = True
            break
        sigma_sq = 0.0
        for c in range(k):
            members = np.flatnonzero(labels == c)
            if members.size == 0:
                continue
            pair, col = update_cluster(g, members)
            coeffs[:, c] = col
            sigma_sq += pair.value
        trace.append(max(float(np.sum(diag) - sigma_sq), 0.0))
        prev = labels.copy()

    corr = _correlations(g, coeffs)
    weights = corr[np.arange(t), prev]
    objective = max(float(np.sum(diag - weights ** 2)), 0.0)
    state = ClusterState(labels=prev, weights=weights, objective=objective, n_atoms=k,
                         iterations=it, converged=converged)
    gram_km = gram if isinstance(gram, KernelMatrix) else None
    dictionary = KernelDictionary(coeffs=coeffs, atom_gram=_atom_gram(g, coeffs),
                                  train_ref=train_ref, train_gram=gram_km)
    return dictionary, state, trace


def atom_norms(gram, dictionary: KernelDictionary) -> np.ndarray:
    """Feature-space norms a_k^T K a_k of every atom."""
    return np.diag(_atom_gram(_gram_array(gram), dictionary.coeffs)).copy()


# --------------------------------------------------------------------------
# serialization


def _write_npy(zf: zipfile.ZipFile, name: str, array: np.ndarray) -> None:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(array), allow_pickle=False)
    # fixed timestamp so identical content gives identical bytes
    info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, buf.getvalue())


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Write an ``.npz``-compatible archive whose bytes depend only on content."""
    with zipfile.ZipFile(path, "w") as zf:
        _write_npy(zf, "__meta__", np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8))
        for name in sorted(arrays):
            _write_npy(zf, name, arrays[name])


def load_arrays(path, expected_format: str) -> tuple[dict[str, np.ndarray], dict]:
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {name: data[name] for name in data.files}
    except (zipfile.BadZipFile, ValueError, OSError) as exc:
        raise ParseError(f"cannot read artifact {path}: {exc}", 0) from exc
    if "__meta__" not in arrays:
        raise ParseError(f"{path} has no metadata record", 0)
    meta = json.loads(arrays.pop("__meta__").tobytes().decode())
    if meta.get("format") != expected_format:
        raise ParseError(f"{path}: expected format {expected_format!r}, found {meta.get('format')!r}", 0)
    return arrays, meta


def dictionary_arrays(dictionary: KernelDictionary, prefix: str = "") -> dict[str, np.ndarray]:
    out = {prefix + "coeffs": dictionary.coeffs, prefix + "atom_gram": dictionary.atom_gram}
    if dictionary.intensities is not None:
        out[prefix + "intensities"] = dictionary.intensities
    if dictionary.locations is not None:
        out[prefix + "locations"] = dictionary.locations
    return out


def dictionary_from_arrays(arrays: dict[str, np.ndarray], train_ref: str, prefix: str = "") -> KernelDictionary:
    try:
        coeffs = arrays[prefix + "coeffs"]
        atom_gram = arrays[prefix + "atom_gram"]
    except KeyError as exc:
        raise ParseError(f"missing dictionary array {exc}", 0) from exc
    if atom_gram.shape != (coeffs.shape[1], coeffs.shape[1]):
        raise ParseError("atom Gram does not match the coefficient matrix", 0)
    return KernelDictionary(coeffs=coeffs, atom_gram=atom_gram, train_ref=train_ref,
                            intensities=arrays.get(prefix + "intensities"),
                            locations=arrays.get(prefix + "locations"))


def save_dictionary(path, dictionary: KernelDictionary, kernel_cfg: KernelConfig,
                    ensemble_cfg: EnsembleConfig | None = None) -> None:
    if dictionary.intensities is None:
        raise DomainError("dictionary has no training intensities attached")
    meta = {
        "format": FORMAT_VERSION,
        "T": dictionary.n_train,
        "K": dictionary.n_atoms,
        "train_ref": dictionary.train_ref,
        "kernel": config_to_dict(kernel_cfg),
        "ensemble": None if ensemble_cfg is None else config_to_dict(ensemble_cfg),
    }
    save_arrays(path, dictionary_arrays(dictionary), meta)


def load_dictionary(path) -> tuple[KernelDictionary, KernelConfig, EnsembleConfig | None]:
    arrays, meta = load_arrays(path, FORMAT_VERSION)
    d = dictionary_from_arrays(arrays, meta.get("train_ref", ""))
    if (d.n_train, d.n_atoms) != (meta["T"], meta["K"]):
        raise ParseError("dictionary shape disagrees with its header", 0)
    ens = meta.get("ensemble")
    return d, KernelConfig(**meta["kernel"]), None if ens is None else EnsembleConfig(**ens)


def config_to_dict(cfg) -> dict:
    from dataclasses import asdict

    out = asdict(cfg)
    if "weights" in out:
        out["weights"] = list(out["weights"])
    return out
