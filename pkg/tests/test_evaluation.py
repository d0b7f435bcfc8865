import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from microres.evaluation import crps, evaluate, interval_score_and_picp, pointwise_metrics, write_comparison

finite = st.floats(-1e4, 1e4, allow_nan=False)


def crps_pairwise(draws, truth):
    """Direct double sum of the sample formula."""
    x = np.asarray(draws, dtype=float)
    n = len(x)
    return np.abs(x - truth).mean() - np.abs(x[:, None] - x[None, :]).sum() / (2 * n * n)


def test_crps_examples():
    assert crps([0, 2], 1) == 0.5
    assert crps([7.5] * 10, 7.5) == 0
    assert crps([3.0], 10.0) == 7.0


@settings(max_examples=100, deadline=None)
@given(st.lists(finite, min_size=1, max_size=40), finite, finite)
def test_crps_properties(draws, truth, shift):
    value = crps(draws, truth)
    assert value >= 0
    assert value == pytest.approx(crps_pairwise(draws, truth), rel=1e-9, abs=1e-6)
    assert value == pytest.approx(crps(list(reversed(draws)), truth), rel=1e-12, abs=1e-9)
    assert value == pytest.approx(crps(np.array(draws) + shift, truth + shift), rel=1e-9, abs=1e-6)


def test_interval_score_examples():
    res = interval_score_and_picp(np.full((3, 5), 2.0), [2.0, 2.0, 2.0])
    assert res.interval_score == 0 and res.picp == 1
    res = interval_score_and_picp(np.tile(np.arange(10.0), (2, 1)), [-1.0, 20.0])
    assert res.picp == 0
    u = np.random.default_rng(0).random((1, 10_000))
    res = interval_score_and_picp(u, [0.5], 0.95)
    assert res.picp == 1 and abs(res.interval_score - 0.9) <= 0.02


def test_pointwise_examples():
    pm = pointwise_metrics([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert (pm.bias, pm.mae, pm.rmse, pm.smape) == (0, 0, 0, 0)
    assert pointwise_metrics([300.0], [100.0]).smape == 100
    flagged = pointwise_metrics([0.0, -5.0], [0.0, 1.0])
    assert flagged.flags == {"smape_zero_denominator": 1, "smape_negative_denominator": 1}


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=30))
def test_pointwise_relations(pairs):
    pred, truth = map(np.array, zip(*pairs))
    pm = pointwise_metrics(pred, truth)
    assert pm.rmse >= abs(pm.bias) / len(pred) - 1e-9
    assert pm.mae >= 0


def test_evaluate_and_report():
    rng = np.random.default_rng(1)
    draws = rng.normal(100, 10, size=(20, 200))
    scores = evaluate(draws, np.full(20, 100.0))
    assert 0 <= scores["picp"] <= 1 and scores["crps"] > 0
    out = io.StringIO()
    write_comparison({"micro": scores, "chainladder": {"bias": 1.0}}, out)
    lines = out.getvalue().splitlines()
    assert lines[0] == "metric,micro,chainladder"
    assert any(line.startswith("bias,") for line in lines)
