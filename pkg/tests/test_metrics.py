import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from splitlab.analysis import metrics


def test_mse_example():
    assert metrics.mse([[1.0]], [[3.0]]) == 4.0
    with pytest.raises(ValueError):
        metrics.mse(np.zeros(2), np.zeros(3))


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, (12, 3), elements=st.floats(-5, 5)),
       hnp.arrays(np.float64, (12, 3), elements=st.floats(-5, 5)),
       hnp.arrays(np.int64, 12, elements=st.integers(0, 3)))
def test_per_class_equals_masked_mse(a, b, labels):
    pc = metrics.per_class_mse(a, b, labels, classes=4)
    for c in range(4):
        m = labels == c
        if m.any():
            assert pc[c] == pytest.approx(metrics.mse(a[m], b[m]), rel=1e-12, abs=1e-15)
        else:
            assert np.isnan(pc[c])


def test_per_class_errors():
    with pytest.raises(ValueError):
        metrics.per_class_mse(np.zeros((2, 1)), np.zeros((2, 1)), [0])
    with pytest.raises(ValueError):
        metrics.per_class_mse(np.zeros((2, 1)), np.zeros((2, 1)), [0, 5], classes=2)


def test_frechet_same_batch_is_zero():
    X = np.random.default_rng(0).standard_normal((200, 6))
    assert metrics.gaussian_frechet(X, X) <= 1e-6


def test_frechet_mean_shift():
    # identical covariance, mean offset m in every coordinate: distance d * m^2
    g = np.random.default_rng(1)
    m, d = 0.5, 4
    A = g.standard_normal((10**4, d))
    B = g.standard_normal((10**4, d)) + m
    assert metrics.gaussian_frechet(A, B) == pytest.approx(d * m * m, rel=0.05)


def test_frechet_matches_scipy_sqrtm():
    from scipy.linalg import sqrtm

    g = np.random.default_rng(2)
    A = g.standard_normal((300, 3)) @ g.standard_normal((3, 3))
    B = g.standard_normal((300, 3)) * [1, 2, 3] + 1
    Sa, Sb = np.cov(A, rowvar=False), np.cov(B, rowvar=False)
    ref = np.sum((A.mean(0) - B.mean(0)) ** 2) + np.trace(Sa + Sb) - 2 * np.trace(sqrtm(Sa @ Sb)).real
    assert metrics.gaussian_frechet(A, B) == pytest.approx(ref, rel=1e-8)


def test_frechet_disjoint_scores_higher():
    g = np.random.default_rng(3)
    A = g.uniform(0, 0.4, (500, 5))
    assert metrics.gaussian_frechet(A, g.uniform(0.6, 1.0, (500, 5))) > \
        metrics.gaussian_frechet(A, g.uniform(0, 0.4, (500, 5)))


def test_frechet_errors():
    with pytest.raises(ValueError):
        metrics.gaussian_frechet(np.zeros((1, 2)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        metrics.gaussian_frechet(np.zeros((3, 2)), np.zeros((3, 4)))
