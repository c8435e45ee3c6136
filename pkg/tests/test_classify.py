import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kernseg import classify
from kernseg.classify import ErrorClassifier, LinearClassifier
from kernseg.errors import DomainError


def _subgradient_oracle(X, y, c, iters=60000):
    """Plain averaged subgradient descent on the same primal, bias as a constant feature."""
    Xa = np.hstack([X, np.ones((len(X), 1))])
    w = np.zeros(Xa.shape[1])
    best = np.inf
    for t in range(1, iters + 1):
        m = y * (Xa @ w)
        f = 0.5 * w @ w + c * np.maximum(0.0, 1.0 - m).sum()
        best = min(best, f)
        g = w - c * (Xa * (y * (m < 1))[:, None]).sum(0)
        w -= (0.05 / np.sqrt(t)) * g
    return best


def test_symmetric_pair():
    clf = classify.svm_train([[-1.0], [1.0]], [-1, 1])
    assert clf.bias == pytest.approx(0.0, abs=1e-9)
    assert classify.svm_predict(clf, [1.0]) == 1
    assert classify.svm_predict(clf, [-1.0]) == -1


def test_separable_blobs_fully_classified():
    rng = np.random.default_rng(0)
    pos = rng.normal(size=(50, 2)) * 0.3 + [2.0, 2.0]
    neg = rng.normal(size=(50, 2)) * 0.3 - [2.0, 2.0]
    X = np.vstack([pos, neg])
    y = np.repeat([1, -1], 50)
    clf = classify.svm_train(X, y, reg_c=10.0)
    assert np.array_equal(classify.svm_predict_many(clf, X), y)


def test_objective_matches_subgradient_oracle():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(60, 4))
    y = np.where(X[:, 0] - 0.5 * X[:, 1] + 0.4 * rng.normal(size=60) > 0, 1, -1)
    clf = classify.svm_train(X, y, reg_c=1.0)
    f = classify.hinge_objective(clf, X, y)
    f_oracle = _subgradient_oracle(X, y, 1.0)
    assert f <= f_oracle * (1 + 1e-4)
    assert f >= f_oracle * (1 - 1e-4)


def test_deterministic_given_seed():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(80, 5))
    y = np.where(rng.normal(size=80) > 0, 1, -1)
    a = classify.svm_train(X, y, seed=3)
    b = classify.svm_train(X, y, seed=3)
    assert a.weights.tobytes() == b.weights.tobytes() and a.bias == b.bias


def test_larger_c_never_adds_margin_violations():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(120, 3))
    y = np.where(X @ [1.0, -1.0, 0.5] + 0.8 * rng.normal(size=120) > 0, 1, -1)
    counts = []
    for c in (0.01, 0.1, 1.0, 10.0):
        clf = classify.svm_train(X, y, reg_c=c)
        counts.append(int(np.sum(y * classify.svm_decision(clf, X) < 1 - 1e-6)))
    assert all(b <= a for a, b in zip(counts, counts[1:]))


def test_training_errors():
    with pytest.raises(DomainError):
        classify.svm_train([[1.0], [2.0]], [1, 1])
    with pytest.raises(DomainError):
        classify.svm_train([[1.0], [2.0]], [1, 0])
    with pytest.raises(DomainError):
        classify.svm_train([[1.0], [2.0]], [1, -1], reg_c=0.0)


def test_predict_examples():
    clf = LinearClassifier(np.array([1.0, 0.0, 0.0]), 0.0)
    assert classify.svm_predict(clf, [2.0, 0.0, 0.0]) == 1
    clf = LinearClassifier(np.array([1.0, 0.0, 0.0]), -0.5)
    assert classify.svm_predict(clf, [0.0, 3.0, 0.0]) == -1
    clf = LinearClassifier(np.array([1.0, 0.0]), 0.0)
    assert classify.svm_predict(clf, [0.0, 5.0]) == 1  # zero decision counts as tumor
    with pytest.raises(DomainError):
        classify.svm_predict(clf, [1.0, 2.0, 3.0])


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(-5, 5),
       st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(1e-3, 1e3))
def test_predict_scale_invariant(w, b, code, scale):
    a = LinearClassifier(np.array(w), b)
    s = LinearClassifier(np.array(w) * scale, b * scale)
    dec = float(np.dot(w, code) + b)
    if abs(dec) > 1e-9:
        assert classify.svm_predict(a, code) == classify.svm_predict(s, code)


def test_error_classify_examples():
    assert classify.error_classify(0.4, 0.4, ErrorClassifier(0.0)) == classify.TUMOR
    assert classify.error_classify(1.0, 0.0, ErrorClassifier(0.1)) == classify.TUMOR
    assert classify.error_classify(0.2, 0.3, ErrorClassifier(0.0)) == classify.NON_TUMOR
    with pytest.raises(DomainError):
        ErrorClassifier(float("nan"))


@given(st.lists(st.tuples(st.floats(0, 2), st.floats(0, 2)), min_size=1, max_size=50),
       st.floats(-2, 2), st.floats(-2, 2))
def test_error_rule_monotone_in_epsilon(pairs, e1, e2):
    lo, hi = sorted((e1, e2))
    e_n = np.array([p[0] for p in pairs])
    e_t = np.array([p[1] for p in pairs])
    at_lo = classify.error_classify_map(e_n, e_t, ErrorClassifier(lo))
    at_hi = classify.error_classify_map(e_n, e_t, ErrorClassifier(hi))
    assert np.all(at_lo | ~at_hi)
