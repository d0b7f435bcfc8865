import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from microres.glm import (
    DegenerateResponseError,
    DesignMatrix,
    MultinomialFit,
    analytic_gradient,
    check_gradient,
    fit_binomial,
    fit_multinomial,
    log_likelihood,
    predict_probs,
)


def _labels(counts):
    return np.concatenate([np.full(c, k) for k, c in enumerate(counts)])


def test_intercept_only_matches_frequencies():
    y = _labels((30, 60, 10))
    fit = fit_multinomial(DesignMatrix(np.ones((100, 1)), y, ["a", "b", "c"]), ridge=0.0)
    probs = fit.predict(np.ones((1, 1)))[0]
    np.testing.assert_allclose(probs, [0.3, 0.6, 0.1], atol=1e-10)
    assert fit.converged


def test_two_by_two_closed_form():
    # x=0: 20 failures, 10 successes; x=1: 5 failures, 15 successes
    x = np.r_[np.zeros(30), np.ones(20)]
    y = np.r_[np.zeros(20), np.ones(10), np.zeros(5), np.ones(15)]
    X = np.column_stack([np.ones_like(x), x])
    fit = fit_binomial(X, y, ridge=0.0)
    a = np.log(10 / 20)
    b = np.log(15 / 5) - a
    np.testing.assert_allclose(fit.coefficients[0], [a, b], atol=1e-9)


def test_grid_search_never_beats_fit():
    rng = np.random.default_rng(3)
    x = rng.normal(size=24)
    y = rng.integers(0, 3, size=24)
    design = DesignMatrix(np.column_stack([np.ones(24), x]), y, ["a", "b", "c"])
    fit = fit_multinomial(design, ridge=0.0)
    best = fit.log_likelihood
    grid = np.linspace(-5, 5, 11)
    for coef in itertools.product(grid, repeat=4):
        assert log_likelihood(design, np.array(coef).reshape(2, 2)) <= best + 1e-6


def test_binomial_intercept_only():
    y = np.r_[np.ones(70), np.zeros(30)]
    fit = fit_binomial(np.ones((100, 1)), y, ridge=0.0)
    assert fit.predict(np.ones((1, 1)))[0, 1] == pytest.approx(0.7, abs=1e-10)


def test_binomial_recovers_coefficients():
    rng = np.random.default_rng(11)
    x = rng.normal(size=50_000)
    p = 1 / (1 + np.exp(-(-1 + 2 * x)))
    y = rng.random(50_000) < p
    fit = fit_binomial(np.column_stack([np.ones_like(x), x]), y)
    np.testing.assert_allclose(fit.coefficients[0], [-1, 2], atol=0.05)


def test_separation_is_flagged_and_finite():
    x = np.r_[np.zeros(20), np.ones(20)]
    y = x.copy()
    fit = fit_binomial(np.column_stack([np.ones_like(x), x]), y, ridge=1e-6)
    assert np.all(np.isfinite(fit.coefficients))
    assert "separation" in fit.flags


def test_single_class_raises():
    with pytest.raises(DegenerateResponseError):
        fit_multinomial(DesignMatrix(np.ones((5, 1)), np.zeros(5), ["a", "b"]))


def test_absent_class_gets_zero_probability():
    y = _labels((10, 0, 5, 5))
    fit = fit_multinomial(DesignMatrix(np.ones((20, 1)), y, list("NPTU")), reference=0)
    probs = fit.predict(np.ones((3, 1)))
    assert np.all(probs[:, 1] == 0)
    np.testing.assert_allclose(probs[0], [0.5, 0, 0.25, 0.25], atol=1e-9)


def test_zero_coefficients_uniform_and_saturation():
    fit = MultinomialFit(list("abc"), ["(intercept)"], [0, 1, 2], 0, np.zeros((2, 1)), 0.0)
    np.testing.assert_allclose(predict_probs(fit, np.ones(1)), [1 / 3] * 3, atol=1e-15)
    fit.coefficients = np.array([[20.0], [0.0]])
    assert predict_probs(fit, np.ones(1))[1] >= 1 - 1e-8


def test_gradient_at_zero_is_frequency_residual():
    rng = np.random.default_rng(5)
    X = np.column_stack([np.ones(40), rng.normal(size=40)])
    y = rng.integers(0, 3, 40)
    design = DesignMatrix(X, y, list("abc"))
    g = analytic_gradient(design, np.zeros((2, 2))).reshape(2, 2)
    for row, k in enumerate((1, 2)):
        expected = ((y == k) - 1 / 3) @ X
        np.testing.assert_allclose(g[row], expected, atol=1e-12)


def test_single_observation_gradient():
    X = np.array([[1.0, 2.0, -1.0]])
    design = DesignMatrix(X, np.array([2]), list("abc"))
    B = np.array([[0.1, -0.2, 0.3], [0.5, 0.0, -0.4]])
    eta = np.r_[0.0, X[0] @ B.T]
    p = np.exp(eta) / np.exp(eta).sum()
    expected = np.outer(np.array([0.0, 1.0]) - p[1:], X[0]).reshape(-1)
    np.testing.assert_allclose(analytic_gradient(design, B), expected, atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(5, 200), p=st.integers(1, 5), K=st.integers(2, 4))
def test_gradient_check_random(seed, n, p, K):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
    design = DesignMatrix(X, rng.integers(0, K, n), [str(k) for k in range(K)])
    coef = rng.normal(scale=0.5, size=(K - 1, p))
    assert check_gradient(design, coef) <= 1e-6


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_fit_properties(seed):
    rng = np.random.default_rng(seed)
    n = 120
    X = np.column_stack([np.ones(n), rng.integers(0, 3, n), rng.normal(size=n)])
    y = rng.integers(0, 3, n)
    design = DesignMatrix(X, y, list("abc"))
    fit = fit_multinomial(design)
    probs = fit.predict(X)
    assert np.all(np.abs(probs.sum(axis=1) - 1) <= 1e-12)
    assert all(b >= a - 1e-12 for a, b in zip(fit.loglik_path, fit.loglik_path[1:]))
    perm = rng.permutation(n)
    refit = fit_multinomial(DesignMatrix(X[perm], y[perm], list("abc")))
    np.testing.assert_array_equal(fit.coefficients, refit.coefficients)


def test_serialization_round_trip():
    y = _labels((30, 60, 10))
    fit = fit_multinomial(DesignMatrix(np.ones((100, 1)), y, list("abc")))
    back = MultinomialFit.from_dict(fit.to_dict())
    np.testing.assert_array_equal(back.coefficients, fit.coefficients)
    assert back.active == fit.active
