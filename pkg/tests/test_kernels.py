import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kernseg.errors import DomainError, ValidationError
from kernseg.kernels import (EnsembleConfig, KernelConfig, KernelMatrix, cross_intensity,
                             cross_location, fuse, gram_intensity, gram_location, intensity_table,
                             rbf_eval, validate_psd)


def test_rbf_eval_examples():
    assert rbf_eval(17.0, 17.0, 0.3) == 1.0
    assert rbf_eval(0.0, 255.0, 0.3) < 1e-300
    # exp(-1.2) from an independent high-precision evaluation
    assert rbf_eval(100.0, 102.0, 0.3) == pytest.approx(0.30119421191220214, abs=1e-15)


def test_rbf_eval_rejects_bad_input():
    with pytest.raises(DomainError):
        rbf_eval(float("nan"), 1.0, 0.3)
    with pytest.raises(DomainError):
        rbf_eval(1.0, float("inf"), 0.3)
    with pytest.raises(DomainError):
        rbf_eval(1.0, 2.0, 0.0)


@given(st.floats(-300, 300), st.floats(0, 50), st.floats(0, 50), st.floats(0.01, 2))
def test_rbf_monotone_in_distance(a, d1, d2, gamma):
    lo, hi = sorted((d1, d2))
    assert rbf_eval(a, a + lo, gamma) >= rbf_eval(a, a + hi, gamma)
    assert rbf_eval(a, a + lo, gamma) == rbf_eval(a + lo, a, gamma)


def test_config_validation():
    with pytest.raises(DomainError):
        KernelConfig(gamma_intensity=-1)
    with pytest.raises(DomainError):
        KernelConfig(intensity_scale="log")
    with pytest.raises(DomainError):
        EnsembleConfig(fusion="weighted_sum", weights=(0.0, 0.0))
    with pytest.raises(DomainError):
        EnsembleConfig(fusion="weighted_sum", weights=(1.0, -0.5))
    with pytest.raises(DomainError):
        EnsembleConfig(neighborhood_radius=-1)
    cfg = KernelConfig()
    with pytest.raises(Exception):
        cfg.gamma_intensity = 1.0


def test_gram_intensity_examples():
    g = gram_intensity([42, 42, 42], KernelConfig())
    assert np.array_equal(g.entries, np.ones((3, 3)))
    g = gram_intensity([0, 255], KernelConfig())
    assert g.entries[0, 0] == g.entries[1, 1] == 1.0
    assert g.entries[0, 1] < 1e-300
    with pytest.raises(DomainError):
        gram_intensity([], KernelConfig())


def test_gram_intensity_random_invariants():
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 255, size=200)
    g = gram_intensity(x, KernelConfig()).entries
    assert np.max(np.abs(g - g.T)) <= 1e-12
    assert np.all(np.diag(g) == 1.0)
    assert g.min() >= 0 and g.max() <= 1
    assert np.linalg.eigvalsh(g).min() >= -1e-8
    assert not g.flags.writeable


def test_unit_interval_scale():
    g = gram_intensity([0, 255], KernelConfig(gamma_intensity=0.3, intensity_scale="unit_interval"))
    assert g.entries[0, 1] == pytest.approx(math.exp(-0.3))


def test_intensity_table_matches_direct_evaluation():
    cfg = KernelConfig()
    v = np.arange(256)
    direct = cross_intensity(v, v, cfg)
    table = intensity_table(cfg)
    assert np.array_equal(table[v[:, None] - v[None, :] + 255], direct)


def test_gram_location_examples():
    cfg = EnsembleConfig(gamma_location=0.5, neighborhood_radius=5)
    g = gram_location([(0, 0), (1, 0), (0, 6), (5, 5)], cfg).entries
    assert g[0, 0] == 1.0
    assert g[0, 1] == pytest.approx(0.6065306597126334, abs=1e-15)
    assert g[0, 2] == 0.0  # Chebyshev distance 6 > radius
    assert g[0, 3] == pytest.approx(math.exp(-25.0))  # corner of the window is inside


def test_gram_location_truncation_exhaustive():
    cfg = EnsembleConfig(gamma_location=0.1, neighborhood_radius=2)
    rr, cc = np.mgrid[0:7, 0:7]
    locs = np.column_stack([rr.ravel(), cc.ravel()])
    g = gram_location(locs, cfg).entries
    cheb = np.max(np.abs(locs[:, None, :] - locs[None, :, :]), axis=2)
    assert np.all(g[cheb > 2] == 0.0)
    assert np.all(g[cheb <= 2] > 0.0)


def test_fuse_weighted_sum_null_weight():
    rng = np.random.default_rng(0)
    a = gram_intensity(rng.uniform(0, 255, 30), KernelConfig())
    b = gram_intensity(rng.uniform(0, 255, 30), KernelConfig(gamma_intensity=0.01))
    out = fuse([a, b], EnsembleConfig(fusion="weighted_sum", weights=(1.0, 0.0)))
    assert np.array_equal(out.entries, a.entries)
    assert out.kind == "ensemble"


def test_fuse_hadamard_absorbs_zero():
    a = KernelMatrix(np.ones((2, 2)))
    b = KernelMatrix(np.eye(2))
    out = fuse([a, b], EnsembleConfig())
    assert out.entries[0, 1] == 0.0


def test_fuse_size_mismatch():
    with pytest.raises(DomainError):
        fuse([KernelMatrix(np.eye(2)), KernelMatrix(np.eye(3))], EnsembleConfig())
    with pytest.raises(DomainError):
        fuse([KernelMatrix(np.eye(2))] * 2, EnsembleConfig(fusion="weighted_sum", weights=(1.0,)))


def test_fuse_rejects_indefinite_result():
    bad = KernelMatrix(np.array([[1.0, 2.0], [2.0, 1.0]]), kind="custom")
    with pytest.raises(ValidationError):
        fuse([bad], EnsembleConfig())


def test_hadamard_of_two_rbf_grams_is_psd():
    rng = np.random.default_rng(1)
    a = gram_intensity(rng.uniform(0, 255, 50), KernelConfig(gamma_intensity=0.01))
    locs = rng.integers(0, 20, size=(50, 2))
    b = KernelMatrix(cross_location(locs, locs, EnsembleConfig(gamma_location=0.05,
                                                                neighborhood_radius=40)))
    out = fuse([a, b], EnsembleConfig())
    assert np.linalg.eigvalsh(out.entries).min() >= -1e-8


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 255), min_size=2, max_size=40),
       st.floats(0.001, 1.0), st.integers(0, 2**31 - 1))
def test_hadamard_preserves_psd(values, gamma, seed):
    rng = np.random.default_rng(seed)
    a = gram_intensity(values, KernelConfig(gamma_intensity=gamma))
    locs = rng.integers(0, 30, size=(len(values), 2))
    # radius beyond the grid extent: no truncation, so the location Gram is exactly Gaussian
    b = gram_location(locs, EnsembleConfig(gamma_location=0.1, neighborhood_radius=64))
    assert validate_psd(fuse([a, b], EnsembleConfig(), check_psd=False))


def test_validate_psd_examples():
    assert validate_psd(np.eye(4))
    assert not validate_psd(np.array([[1.0, 2.0], [2.0, 1.0]]), 1e-8)
    with pytest.raises(DomainError):
        validate_psd(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_validate_psd_large_matrix_route():
    rng = np.random.default_rng(2)
    g = gram_intensity(rng.uniform(0, 255, 2100), KernelConfig(gamma_intensity=0.001))
    assert validate_psd(g)
    m = g.entries.copy()
    m[0, 1] = m[1, 0] = 1.5  # breaks positivity of the leading 2x2 minor
    assert not validate_psd(m)


def test_kernel_matrix_rejects_asymmetric():
    with pytest.raises(DomainError):
        KernelMatrix(np.array([[1.0, 0.2], [0.1, 1.0]]))
    with pytest.raises(DomainError):
        KernelMatrix(np.ones((2, 3)))
