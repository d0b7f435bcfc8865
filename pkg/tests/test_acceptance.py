"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Thresholds are fixed; a failing criterion fails its test.
"""

import csv
import filecmp
import io
import itertools
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate

from microres.chain_ladder import cl_project
from microres.claims_data import CovariateVector, discretize_claim, parse_transactions, write_period_rows
from microres.cli import main
from microres.config import ModelConfig
from microres.evaluation import crps, interval_score_and_picp, pointwise_metrics
from microres.experiments import recovery_check, unbiasedness_trial
from microres.glm import DesignMatrix, check_gradient, fit_multinomial
from microres.ibnr_counts import RunoffTriangle, expected_ibnr, fit_ibnr_counts, negative_binomial
from microres.payment_model import GpdFit, SplicedPaymentModel, TruncNormFit, expected_payment, weights_from_probs
from microres.time_model import HazardModel, force_state_exit, force_terminal_only, hazards_for

FIXTURES = Path(__file__).parent / "fixtures"


# 1 ------------------------------------------------------------------------------

def test_criterion_01_discretization_golden(criterion):
    start = time.perf_counter()
    with open(FIXTURES / "golden_transactions.csv") as fh:
        claim = parse_transactions(fh, ModelConfig()).claims[0]
    rows = discretize_claim(claim, ModelConfig())
    out = io.StringIO()
    write_period_rows(rows, out)
    elapsed = time.perf_counter() - start
    got = list(csv.DictReader(io.StringIO(out.getvalue())))
    with open(FIXTURES / "golden_periods.csv") as fh:
        expected = list(csv.DictReader(fh))
    same = len(got) == len(expected) == 8 and all(
        all(g[k] == v for k, v in e.items()) for g, e in zip(got, expected))
    ok = criterion(1, same and elapsed < 1.0, f"{len(got)} rows, exact={same}, {elapsed:.3f}s")
    assert ok


# 2 ------------------------------------------------------------------------------

def _random_trapezoid(rng):
    n_acc = int(rng.integers(2, 11))
    n_dev = int(rng.integers(2, n_acc + 1))
    vals = rng.integers(1, 500, size=(n_acc, n_dev)).astype(float)
    for i in range(n_acc):
        vals[i, max(0, n_acc - i):] = np.nan
    return RunoffTriangle(vals)


def test_criterion_02_chain_ladder_consistency(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(20)
    worst = 0.0
    for _ in range(50):
        tri = _random_trapezoid(rng)
        _, total = expected_ibnr(fit_ibnr_counts(tri))
        cl = cl_project(tri).total
        worst = max(worst, abs(total - cl) / max(abs(cl), 1e-300) if cl else abs(total))
    elapsed = time.perf_counter() - start
    ok = criterion(2, worst <= 1e-9 and elapsed < 5, f"max relative gap {worst:.2e}, {elapsed:.2f}s")
    assert ok


# 3 ------------------------------------------------------------------------------

def test_criterion_03_negative_binomial_moments(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(30)
    n = 100_000
    details, ok = [], True
    for r, p in ((10, 0.5), (100, 0.8), (283, 0.95)):
        x = negative_binomial(r, p, n, rng).astype(float)
        mean, var = r * (1 - p) / p, r * (1 - p) / p**2
        m, s2 = x.mean(), x.var(ddof=1)
        se_mean = np.sqrt(var / n)
        m4 = np.mean((x - m) ** 4)
        se_var = np.sqrt((m4 - s2**2) / n)
        z_mean, z_var = (m - mean) / se_mean, (s2 - var) / se_var
        ok &= abs(z_mean) <= 3 and abs(z_var) <= 3
        details.append(f"({r},{p}) z={z_mean:+.2f}/{z_var:+.2f}")
    elapsed = time.perf_counter() - start
    ok = criterion(3, ok and elapsed < 10, ", ".join(details) + f", {elapsed:.2f}s")
    assert ok


# 4 ------------------------------------------------------------------------------

def _loglik_grid(X, y, K, coefs):
    """Independent log-likelihood for a batch of coefficient arrays (G, K-1, p)."""
    eta = np.concatenate([np.zeros((len(coefs), len(y), 1)), np.einsum("np,gkp->gnk", X, coefs)], axis=2)
    eta -= eta.max(axis=2, keepdims=True)
    logp = eta - np.log(np.exp(eta).sum(axis=2, keepdims=True))
    return logp[:, np.arange(len(y)), y].sum(axis=1)


def test_criterion_04_mle_correctness(criterion):
    rng = np.random.default_rng(40)
    worst_grad = 0.0
    for _ in range(100):
        n, p, K = int(rng.integers(5, 200)), int(rng.integers(1, 6)), int(rng.integers(2, 5))
        X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
        design = DesignMatrix(X, rng.integers(0, K, n), [str(k) for k in range(K)])
        worst_grad = max(worst_grad, check_gradient(design, rng.normal(scale=0.5, size=(K - 1, p))))

    worst_freq = 0.0
    for _ in range(100):
        K = int(rng.integers(2, 5))
        counts = rng.integers(1, 100, size=K)
        y = np.repeat(np.arange(K), counts)
        fit = fit_multinomial(DesignMatrix(np.ones((len(y), 1)), y, [str(k) for k in range(K)]), ridge=0.0)
        worst_freq = max(worst_freq, np.abs(fit.predict(np.ones((1, 1)))[0] - counts / counts.sum()).max())

    worst_grid = -np.inf
    grid = np.linspace(-4, 4, 9)
    coefs = np.array(list(itertools.product(grid, repeat=4))).reshape(-1, 2, 2)
    for _ in range(20):
        n = 30
        X = np.column_stack([np.ones(n), rng.normal(size=n)])
        y = rng.integers(0, 3, n)
        if len(np.unique(y)) < 3:
            continue
        fit = fit_multinomial(DesignMatrix(X, y, list("abc")), ridge=0.0)
        worst_grid = max(worst_grid, float(_loglik_grid(X, y, 3, coefs).max() - fit.log_likelihood))
    ok = worst_grad <= 1e-6 and worst_freq <= 1e-10 and worst_grid <= 1e-6
    ok = criterion(4, ok, f"gradient gap {worst_grad:.1e}, frequency gap {worst_freq:.1e}, "
                          f"grid excess {worst_grid:+.2e}")
    assert ok


# 5 ------------------------------------------------------------------------------

def test_criterion_05_hazard_normalization_and_forcing(criterion):
    rng = np.random.default_rng(50)
    x = CovariateVector(3, 0, 5, None, None, None, 5)
    worst, zeros = 0.0, True
    for _ in range(10_000):
        h = rng.dirichlet(np.ones(4) * rng.uniform(0.2, 3))
        h = np.clip(h, 1e-12, None)
        h /= h.sum()
        out = hazards_for(HazardModel.constant(0, h), x)
        exit_ = force_state_exit(out)
        term = force_terminal_only(out)
        worst = max(worst, abs(out.sum() - 1), abs(exit_.sum() - 1), abs(term.sum() - 1))
        zeros &= exit_[0] == 0.0 and term[1] == 0.0
    ok = criterion(5, worst <= 1e-12 and zeros, f"max |sum - 1| = {worst:.1e}, forced zeros exact={zeros}")
    assert ok


# 6 ------------------------------------------------------------------------------

def _random_spliced(rng):
    b = np.sort(rng.uniform(-2000, 5000, size=3))
    left = GpdFit(rng.uniform(100, 2000), rng.uniform(-0.3, 0.6), 100, 0.0)
    right = GpdFit(rng.uniform(100, 5000), rng.uniform(-0.3, 0.6), 100, 0.0)
    body = [TruncNormFit(lo, hi, rng.uniform(lo - 500, hi + 500), rng.uniform(50, 3000), 100, 0.0)
            for lo, hi in zip(b[:-1], b[1:])]
    return SplicedPaymentModel(0, b, left, right, body, weights_from_probs(rng.dirichlet(np.ones(4))))


def test_criterion_06_spliced_density(criterion):
    rng = np.random.default_rng(60)
    worst_mass, worst_mean = 0.0, 0.0
    for _ in range(20):
        model = _random_spliced(rng)
        probs = model.weight_fit.predict(np.ones((1, 1)))[0]
        f = lambda y: model.density(y, probs)[0]  # noqa: E731
        edges = [-np.inf, *model.splits, np.inf]
        mass = sum(integrate.quad(f, lo, hi, epsabs=1e-12, epsrel=1e-12, limit=400)[0]
                   for lo, hi in zip(edges[:-1], edges[1:]))
        worst_mass = max(worst_mass, abs(mass - 1))
        worst_mean = max(worst_mean, abs(expected_payment(model, probs) - probs @ model.means))
    # reference state-0 weights and component means
    mu, w = [-6043.0, -475.0, 1404.0, 7230.0], [0.003, 0.004, 0.762, 0.231]
    splits = np.array([-1230.0, 0.0, 3500.0])
    body = [TruncNormFit(-1230, 0, -475, 1, 0, mu[1], ["empirical"]), TruncNormFit(0, 3500, 1404, 1, 0, mu[2], ["empirical"])]
    example = SplicedPaymentModel(0, splits, GpdFit(splits[0] - mu[0], 0.0, 0, 0.0), GpdFit(mu[3] - splits[2], 0.0, 0, 0.0),
                                  body, weights_from_probs(w))
    value = float(expected_payment(example, np.array(w)))
    ok = worst_mass <= 1e-6 and worst_mean <= 1e-10 and abs(value - 2720) <= 1
    ok = criterion(6, ok, f"max |mass - 1| = {worst_mass:.1e}, mean gap {worst_mean:.1e}, example {value:.2f}")
    assert ok


# 7 ------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_07_parameter_recovery(criterion):
    start = time.perf_counter()
    rec = recovery_check(seed=0, n_claims=50_000)
    elapsed = time.perf_counter() - start
    hz = float(np.abs(rec.hazards - rec.true_hazards).max())
    scale_err, shape_err = abs(rec.gpd_right[0] - 2.0), abs(rec.gpd_right[1] - 0.3)
    coef_err = abs(rec.segment_coef - rec.true_segment_coef)
    ok = hz <= 0.02 and scale_err <= 0.05 and shape_err <= 0.05 and coef_err <= 0.05 and elapsed < 300
    ok = criterion(7, ok, f"hazards {hz:.4f}, GPD ({rec.gpd_right[0]:.3f}, {rec.gpd_right[1]:.3f}), "
                          f"coefficient {rec.segment_coef:.3f} vs {rec.true_segment_coef}, {elapsed:.0f}s")
    assert ok


# 8 ------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_08_end_to_end_unbiasedness(criterion):
    start = time.perf_counter()
    trials = [unbiasedness_trial(seed) for seed in range(20)]
    elapsed = time.perf_counter() - start
    for t in trials:
        print(f"  portfolio {t.seed:2d}: truth {t.truth:,.0f} mean {t.mean:,.0f} PE {t.pe:+.2f}% "
              f"90% [{t.lower:,.0f}, {t.upper:,.0f}] covered={t.covered}")
    covered = sum(t.covered for t in trials)
    median_pe = float(np.median([abs(t.pe) for t in trials]))
    ok = covered >= 16 and median_pe <= 5 and elapsed < 1800
    ok = criterion(8, ok, f"covered {covered}/20, median |PE| {median_pe:.2f}%, {elapsed / 60:.1f} min")
    assert ok


# 9 ------------------------------------------------------------------------------

def test_criterion_09_scoring(criterion):
    checks = {
        "crps({0,2},1)": crps([0.0, 2.0], 1.0) == 0.5,
        "crps({R},R)": crps([123.4], 123.4) == 0.0,
        "smape(100,300)": pointwise_metrics([300.0], [100.0]).smape == 100.0,
    }
    u = np.random.default_rng(90).random((1, 10_000))
    iv = interval_score_and_picp(u, [0.5], 0.95)
    checks["uniform IS"] = abs(iv.interval_score - 0.9) <= 0.02 and iv.picp == 1.0
    wide = interval_score_and_picp(np.tile(np.arange(10.0), (2, 1)), [-1.0, 20.0])
    checks["outside PICP"] = wide.picp == 0.0
    ok = criterion(9, all(checks.values()), ", ".join(f"{k}={'ok' if v else 'bad'}" for k, v in checks.items()))
    assert ok


# 10 -----------------------------------------------------------------------------

def test_criterion_10_reproducibility(criterion, tmp_path):
    as_of = "2012-12-31"
    assert main(["generate", "--seed", "5", "--n-claims", "1200", "--as-of", as_of, "--out-dir", str(tmp_path / "data")]) == 0
    tx = str(tmp_path / "data" / "transactions.csv")
    runs = []
    for name, workers in (("a", "1"), ("b", "1"), ("c", "3")):
        out = tmp_path / name
        assert main(["fit", "--transactions", tx, "--as-of", as_of, "--out-dir", str(out)]) == 0
        assert main(["simulate", "--transactions", tx, "--as-of", as_of, "--seed", "11", "--n-sims", "30",
                     "--workers", workers, "--payment-mode", "sample", "--out-dir", str(out)]) == 0
        assert main(["evaluate", "--claim-draws", str(out / "claim_draws.csv"), "--truth",
                     str(tmp_path / "data" / "truth.csv"), "--out-dir", str(out)]) == 0
        assert main(["report", "--out-dir", str(out)]) == 0
        runs.append(out)
    files = ["reserve_summary.csv", "claim_quantiles.csv", "histogram.csv", "draws.csv", "claim_draws.csv",
             "metrics.csv", "report.txt"] + [f"models/{f}" for f in ("time_models.json", "payment_models.json",
                                                                     "reporting.json", "ibnr.json")]
    mismatched = []
    for other in runs[1:]:
        _, bad, err = filecmp.cmpfiles(runs[0], other, files, shallow=False)
        mismatched += [f"{other.name}/{f}" for f in bad + err]
    ok = criterion(10, not mismatched, f"{len(files)} files x 3 runs (workers 1, 1, 3); "
                                       f"mismatches: {mismatched or 'none'}")
    assert ok
