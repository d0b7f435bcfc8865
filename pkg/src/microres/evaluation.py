"""Scores for predictive reserve distributions and point forecasts.

Quantiles use linear interpolation between order statistics (numpy's
default, "type 7") for both the interval score and the coverage.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence, TextIO

import numpy as np


def crps(draws, truth: float) -> float:
    """Sample CRPS: mean |X - y| minus half the mean pairwise |X - X'|.

    The pairwise term uses the sorted-sample identity
    ``sum_ij |x_i - x_j| = 2 sum_i (2i - n - 1) x_(i)`` for O(n log n) cost.
    """
    x = np.sort(np.asarray(draws, dtype=float).ravel())
    n = len(x)
    if n == 0:
        raise ValueError("CRPS needs at least one draw")
    first = np.abs(x - truth).mean()
    i = np.arange(1, n + 1)
    pair_sum = 2.0 * np.sum((2 * i - n - 1) * x)
    return float(max(first - pair_sum / (2.0 * n * n), 0.0))


@dataclass
class IntervalScore:
    interval_score: float
    picp: float
    lower: np.ndarray
    upper: np.ndarray


def interval_score_and_picp(draws, truths, alpha: float = 0.95) -> IntervalScore:
    """Mean width of the central interval between the ``1 - alpha`` and ``alpha``
    quantiles, and the share of truths inside it.

    ``draws`` has one row of draws per claim.
    """
    d = np.atleast_2d(np.asarray(draws, dtype=float))
    y = np.asarray(truths, dtype=float).ravel()
    if d.shape[0] != len(y):
        raise ValueError("one row of draws per truth is required")
    if d.shape[1] < 2:
        raise ValueError("at least two draws per claim are required")
    lo_p, hi_p = sorted((1.0 - alpha, alpha))
    lower = np.quantile(d, lo_p, axis=1)
    upper = np.quantile(d, hi_p, axis=1)
    inside = (y >= lower) & (y <= upper)
    return IntervalScore(float(np.mean(upper - lower)), float(np.mean(inside)), lower, upper)


@dataclass
class PointMetrics:
    bias: float
    mae: float
    rmse: float
    smape: float
    flags: dict[str, int] = field(default_factory=dict)


def pointwise_metrics(means, truths) -> PointMetrics:
    """Bias (sum of truth minus prediction), MAE, RMSE and sMAPE.

    sMAPE uses the denominator ``R + R_hat`` without absolute values; pairs
    with a zero denominator are skipped and pairs with a negative one are
    kept but counted in ``flags``.
    """
    pred = np.asarray(means, dtype=float).ravel()
    y = np.asarray(truths, dtype=float).ravel()
    if len(pred) != len(y):
        raise ValueError("predictions and truths must align")
    err = y - pred
    denom = y + pred
    ok = denom != 0
    flags = {}
    if (~ok).any():
        flags["smape_zero_denominator"] = int((~ok).sum())
    if (denom < 0).any():
        flags["smape_negative_denominator"] = int((denom < 0).sum())
    smape = float(np.mean(200.0 * np.abs(err[ok]) / denom[ok])) if ok.any() else float("nan")
    return PointMetrics(
        bias=float(err.sum()),
        mae=float(np.abs(err).mean()) if len(err) else 0.0,
        rmse=float(np.sqrt(np.mean(err ** 2))) if len(err) else 0.0,
        smape=smape,
        flags=flags,
    )


def percentage_error(predicted: float, truth: float) -> float:
    """Portfolio percentage error in percent."""
    return 100.0 * (predicted - truth) / truth


def evaluate(draws, truths, alpha: float = 0.95) -> dict[str, float]:
    """All scores for per-claim draws against per-claim true reserves."""
    d = np.atleast_2d(np.asarray(draws, dtype=float))
    y = np.asarray(truths, dtype=float)
    pm = pointwise_metrics(d.mean(axis=1), y)
    iv = interval_score_and_picp(d, y, alpha)
    out = {
        "crps": float(np.mean([crps(row, t) for row, t in zip(d, y)])),
        "interval_score": iv.interval_score,
        "picp": iv.picp,
        "bias": pm.bias,
        "mae": pm.mae,
        "rmse": pm.rmse,
        "smape": pm.smape,
    }
    for k, v in pm.flags.items():
        out[k] = float(v)
    return out


def write_comparison(results: Mapping[str, Mapping[str, float]], stream: TextIO,
                     metrics: Sequence[str] | None = None) -> None:
    """Metric by method table."""
    methods = list(results)
    if metrics is None:
        metrics = list(dict.fromkeys(k for m in methods for k in results[m]))
    stream.write("metric," + ",".join(methods) + "\n")
    for name in metrics:
        cells = [f"{results[m][name]:.4f}" if name in results[m] else "" for m in methods]
        stream.write(name + "," + ",".join(cells) + "\n")
