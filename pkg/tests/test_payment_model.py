import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from microres.config import ModelConfig
from microres.payment_model import (
    GpdFit,
    SplicedPaymentModel,
    TruncNormFit,
    expected_payment,
    fit_gpd,
    fit_mixture_weights,
    fit_truncated_normal,
    gpd_gradient,
    sample_payment,
    select_split_points,
    weights_from_probs,
)


def make_model(splits, left, right, body, probs):
    return SplicedPaymentModel(0, np.asarray(splits, dtype=float), left, right, body, weights_from_probs(probs))


def random_model(rng):
    b = np.sort(rng.uniform(-2000, 5000, size=3))
    left = GpdFit(rng.uniform(100, 2000), rng.uniform(-0.3, 0.6), 100, 0.0)
    right = GpdFit(rng.uniform(100, 5000), rng.uniform(-0.3, 0.6), 100, 0.0)
    body = [TruncNormFit(lo, hi, rng.uniform(lo - 500, hi + 500), rng.uniform(50, 3000), 100, 0.0)
            for lo, hi in zip(b[:-1], b[1:])]
    return make_model(b, left, right, body, rng.dirichlet(np.ones(4)))


def test_split_points_quantile_rule():
    y = np.random.default_rng(0).normal(0, 1000, size=20_000)
    choice = select_split_points(y, ModelConfig())
    assert choice.splits[1] == 0
    assert choice.splits[0] == pytest.approx(-1645, abs=40)
    assert choice.splits[2] == pytest.approx(1645, abs=40)
    assert choice.mean_excess and all(len(r) == 3 for r in choice.mean_excess)


def test_split_points_override_and_degenerate():
    config = ModelConfig(payment_splits={0: [-1230, 0, 3500]})
    np.testing.assert_array_equal(select_split_points([1.0, 2.0], config, 0).splits, [-1230, 0, 3500])
    choice = select_split_points(np.random.default_rng(1).exponential(100, 500), ModelConfig())
    assert "left_bins_empty" in choice.flags
    assert choice.splits[0] < 0


def test_gpd_exponential_recovery():
    z = np.random.default_rng(20240611).exponential(1.0, 10_000)
    fit = fit_gpd(z)
    assert abs(fit.shape) <= 0.05 and abs(fit.scale - 1) <= 0.05
    assert np.max(np.abs(gpd_gradient(z, fit.scale, fit.shape))) < 1e-2


def test_gpd_pareto_recovery():
    z = stats.genpareto.rvs(0.3, scale=2.0, size=10_000, random_state=np.random.default_rng(20240611))
    fit = fit_gpd(z)
    assert abs(fit.shape - 0.3) <= 0.05 and abs(fit.scale - 2) <= 0.05


def test_gpd_fallbacks():
    assert "degenerate" in fit_gpd(np.full(100, 3.0)).flags
    small = fit_gpd(np.random.default_rng(2).exponential(2.0, 10))
    assert "exponential_fallback" in small.flags and small.shape == 0


def test_gpd_fit_beats_scipy_loglik():
    z = stats.genpareto.rvs(0.2, scale=5.0, size=3000, random_state=np.random.default_rng(9))
    fit = fit_gpd(z)
    c, _, s = stats.genpareto.fit(z, floc=0)
    ours = stats.genpareto.logpdf(z, fit.shape, scale=fit.scale).sum()
    assert ours >= stats.genpareto.logpdf(z, c, scale=s).sum() - 1e-6


def test_truncated_normal():
    rng = np.random.default_rng(3)
    x = rng.normal(500, 50, size=5000)
    fit = fit_truncated_normal(x[(x >= 0) & (x < 1000)], 0, 1000)
    assert fit.mu == pytest.approx(x.mean(), abs=3)
    sym = TruncNormFit(-100, 100, 0.0, 40.0, 100, 0.0)
    assert sym.mean == pytest.approx(0, abs=1e-12)
    few = fit_truncated_normal([1, 2, 3, 4, 5, 6, 7, 8, 9, 10], 0, 20)
    assert "empirical" in few.flags and few.mean == 5.5


def test_mixture_weights_intercept_and_empty_bin():
    rng = np.random.default_rng(4)
    mix = np.array([0.003, 0.004, 0.762, 0.231])
    bins = rng.choice(4, size=100_000, p=mix)
    fit = fit_mixture_weights(bins, np.ones((len(bins), 1)), 4, ["(intercept)"], ModelConfig())
    np.testing.assert_allclose(fit.predict(np.ones((1, 1)))[0], np.bincount(bins) / len(bins), atol=1e-8)
    bins = rng.choice([0, 2, 3], size=1000)
    fit = fit_mixture_weights(bins, np.ones((1000, 1)), 4, ["(intercept)"], ModelConfig())
    assert fit.predict(np.ones((1, 1)))[0, 1] == 0


def test_mixture_weights_logistic_recovery():
    rng = np.random.default_rng(5)
    n = 50_000
    x = rng.normal(size=n)
    gamma = np.array([[0.2, 0.5], [0.1, -0.4], [0.0, 0.3]])
    eta = np.column_stack([np.zeros(n), gamma[:, 0] + gamma[:, 1] * x[:, None]])
    p = np.exp(eta) / np.exp(eta).sum(axis=1, keepdims=True)
    bins = (rng.random(n)[:, None] > np.cumsum(p, axis=1)).sum(axis=1)
    fit = fit_mixture_weights(bins, np.column_stack([np.ones(n), x]), 4, ["(intercept)", "x"], ModelConfig())
    assert np.max(np.abs(fit.coefficients[:, 1] - gamma[:, 1])) <= 0.03


def test_expected_payment_examples():
    left = GpdFit(1.0, 0.0, 0, 0.0)
    body = [TruncNormFit(-1230, 0, -475, 300, 100, 0.0), TruncNormFit(0, 3500, 1070, 800, 100, 0.0)]
    model = make_model([-1230, 0, 3500], left, left, body, [0, 0, 1, 0])
    means = model.means
    assert expected_payment(model, np.array([0, 0, 1.0, 0])) == pytest.approx(means[2], abs=1e-10)
    assert expected_payment(model, np.array([0.3, 0.2, 0.4, 0.1])) == pytest.approx(
        float(np.dot([0.3, 0.2, 0.4, 0.1], means)), abs=1e-10)
    # reference state 0 weights and means
    mu = np.array([-6043, -475, 1404, 7230])
    w = np.array([0.003, 0.004, 0.762, 0.231])
    assert float(w @ mu) == pytest.approx(2720, abs=1)
    assert float(np.full(4, 0.25) @ np.array([-1, 1, -1, 1])) == 0


def test_body_mean_inside_bin_and_degenerate_weights():
    body = TruncNormFit(0, 3500, 1070, 200, 100, 0.0)
    assert 0 < body.mean < 3500
    model = make_model([-1230, 0, 3500], GpdFit(1, 0, 0, 0), GpdFit(1, 0, 0, 0),
                       [TruncNormFit(-1230, 0, -400, 200, 100, 0.0), body], [0, 0, 1, 0])
    assert expected_payment(model, np.array([0, 0, 1.0, 0])) == pytest.approx(body.mean)


@pytest.mark.parametrize("seed", range(20))
def test_density_integrates_to_one(seed):
    model = random_model(np.random.default_rng(seed))
    probs = model.weight_fit.predict(np.ones((1, 1)))[0]
    b = model.splits
    total = 0.0
    for lo, hi in zip(b[:-1], b[1:]):
        total += integrate.quad(lambda y: model.density(y, probs)[0], lo, hi, epsabs=1e-12, limit=200)[0]
    # tails in closed form through the reflected GPD law
    total += probs[0] * stats.genpareto.cdf(np.inf, model.left.shape, scale=model.left.scale)
    total += probs[-1] * stats.genpareto.cdf(np.inf, model.right.shape, scale=model.right.scale)
    tail_left = integrate.quad(lambda y: model.density(y, probs)[0], -np.inf, b[0], limit=200)[0]
    assert tail_left == pytest.approx(probs[0], abs=1e-6)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_sampling_mean_support_and_determinism():
    body = TruncNormFit(0, 2000, 1000, 300, 100, 0.0)
    model = make_model([-500, 0, 2000], GpdFit(100, 0.1, 0, 0), GpdFit(100, 0.1, 0, 0),
                       [TruncNormFit(-500, 0, -250, 100, 100, 0.0), body], [0, 0, 1, 0])
    probs = np.array([0, 0, 1.0, 0])
    draws = sample_payment(model, probs, np.random.default_rng(6), 100_000)
    sd = np.sqrt(stats.truncnorm.var(-1000 / 300, 1000 / 300, loc=1000, scale=300))
    assert abs(draws.mean() - 1000) <= 3 * sd / np.sqrt(len(draws))
    assert np.all((draws >= 0) & (draws < 2000))
    left = sample_payment(model, np.array([1.0, 0, 0, 0]), np.random.default_rng(7), 1000)
    assert np.all(left <= -500)
    a = sample_payment(model, np.array([0.2, 0.3, 0.3, 0.2]), np.random.default_rng(8), 50)
    b = sample_payment(model, np.array([0.2, 0.3, 0.3, 0.2]), np.random.default_rng(8), 50)
    np.testing.assert_array_equal(a, b)


def test_left_tail_reflection():
    model = make_model([-500, 0, 2000], GpdFit(100, 0.2, 0, 0), GpdFit(100, 0.1, 0, 0),
                       [TruncNormFit(-500, 0, -250, 100, 100, 0.0), TruncNormFit(0, 2000, 1000, 300, 100, 0.0)],
                       [1, 0, 0, 0])
    draws = sample_payment(model, np.array([1.0, 0, 0, 0]), np.random.default_rng(10), 20_000)
    stat = stats.kstest(-draws - 500, stats.genpareto(0.2, scale=100).cdf)
    assert stat.pvalue > 0.001


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_samples_fall_in_drawn_bin(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng)
    for comp in range(4):
        probs = np.eye(4)[comp]
        draws = sample_payment(model, probs, rng, 200)
        assert np.all(model.bin_of(draws) == comp)


def test_serialization_round_trip():
    model = random_model(np.random.default_rng(11))
    back = SplicedPaymentModel.from_dict(model.to_dict())
    np.testing.assert_array_equal(back.means, model.means)
    np.testing.assert_array_equal(back.splits, model.splits)
