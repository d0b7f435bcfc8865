"""Data-driven binning of continuous predictors.

Pipeline per variable (and per state data set):

1. bootstrap resamples of the training rows;
2. split the variable into 40 quantile groups, each represented by its median;
3. multinomial transition model on the group factor and the time-in-state level;
4. local linear regression (tricube weights) of each hazard's group effects
   against the group medians, evaluated at every observed value;
5. greedy 1-D regression tree on the smoothed effects, per hazard;
6. merge the per-hazard split points into one set, enforcing a minimum bin count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .glm import DegenerateResponseError, DesignMatrix, fit_multinomial

N_QUANTILE_GROUPS = 40


@dataclass
class BinningSpec:
    variable: str
    split_points: np.ndarray = field(default_factory=lambda: np.empty(0))
    min_bin_count: int = 0
    n_target_bins: int = 0

    def __post_init__(self) -> None:
        self.split_points = np.asarray(self.split_points, dtype=float).reshape(-1)
        if np.any(np.diff(self.split_points) <= 0):
            raise ValueError(f"split points for {self.variable} must be strictly increasing")

    @property
    def n_bins(self) -> int:
        return len(self.split_points) + 1

    def apply(self, values) -> np.ndarray:
        """Bin index of each value; values equal to a split go to the upper bin."""
        return np.searchsorted(self.split_points, np.asarray(values, dtype=float), side="right")

    def labels(self) -> list[str]:
        edges = [-np.inf, *self.split_points.tolist(), np.inf]
        return [f"[{lo:g}, {hi:g})" for lo, hi in zip(edges[:-1], edges[1:])]

    def to_dict(self) -> dict:
        return {
            "variable": self.variable,
            "split_points": self.split_points.tolist(),
            "min_bin_count": int(self.min_bin_count),
            "n_target_bins": int(self.n_target_bins),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BinningSpec":
        return cls(data["variable"], data["split_points"], data.get("min_bin_count", 0),
                   data.get("n_target_bins", 0))


@dataclass
class QuantileGroups:
    boundaries: np.ndarray
    mediods: np.ndarray
    index: np.ndarray  # group of each input value
    counts: np.ndarray


def quantile_groups(values, n_groups: int = N_QUANTILE_GROUPS) -> QuantileGroups:
    """Split ``values`` at the 1/n_groups quantiles; each group's median is its mediod."""
    v = np.asarray(values, dtype=float)
    distinct = np.unique(v)
    if len(distinct) < n_groups:
        boundaries = distinct[1:]
    else:
        probs = np.arange(1, n_groups) / n_groups
        boundaries = np.unique(np.quantile(v, probs))
    index = np.searchsorted(boundaries, v, side="right")
    # drop empty groups so group labels are contiguous
    used, index = np.unique(index, return_inverse=True)
    counts = np.bincount(index, minlength=len(used))
    order = np.argsort(index, kind="stable")
    sorted_v = v[order]
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    mediods = np.array([np.median(np.sort(sorted_v[s:s + c])) for s, c in zip(starts, counts)])
    kept_bounds = boundaries[used[1:] - 1] if len(used) > 1 else np.empty(0)
    return QuantileGroups(kept_bounds, mediods, index, counts)


def loess(x, y, at, span: float = 0.75) -> np.ndarray:
    """Local linear regression with tricube weights evaluated at ``at``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    at = np.asarray(at, dtype=float)
    n = len(x)
    q = int(min(n, max(3, np.floor(span * n))))
    out = np.empty(len(at))
    chunk = 20_000
    for s in range(0, len(at), chunk):
        x0 = at[s:s + chunk, None]
        dx = x[None, :] - x0
        dist = np.abs(dx)
        h = np.partition(dist, q - 1, axis=1)[:, q - 1:q]
        if span > 1:
            h = h * span
        h = np.where(h > 0, h * (1 + 1e-10), 1.0)
        u = np.clip(dist / h, 0.0, 1.0)
        w = (1 - u**3) ** 3
        s0 = w.sum(axis=1)
        s1 = (w * dx).sum(axis=1)
        s2 = (w * dx * dx).sum(axis=1)
        t0 = (w * y).sum(axis=1)
        t1 = (w * dx * y).sum(axis=1)
        det = s0 * s2 - s1 * s1
        ok = np.abs(det) > 1e-12 * np.maximum(s0 * s2, 1e-300)
        local_linear = (s2 * t0 - s1 * t1) / np.where(ok, det, 1.0)
        mean = t0 / np.where(s0 > 0, s0, 1.0)
        out[s:s + chunk] = np.where(ok, local_linear, mean)
    return out


def smooth_effects(mediods, effects, at, span: float = 0.75) -> np.ndarray:
    """Smoothed per-group effects evaluated at every value in ``at``.

    With fewer than four groups the effects are passed through unchanged,
    each value taking the effect of its nearest mediod.
    """
    mediods = np.asarray(mediods, dtype=float)
    effects = np.asarray(effects, dtype=float)
    at = np.asarray(at, dtype=float)
    if len(mediods) < 4:
        nearest = np.abs(at[:, None] - mediods[None, :]).argmin(axis=1)
        return effects[nearest]
    return loess(mediods, effects, at, span)


def _best_split(csum_n, csum_s, lo, hi, min_count):
    """Best SSE-reducing split of distinct-value range [lo, hi)."""
    n_tot = csum_n[hi] - csum_n[lo]
    s_tot = csum_s[hi] - csum_s[lo]
    i = np.arange(lo + 1, hi)
    if len(i) == 0:
        return None, 0.0
    n_left = csum_n[i] - csum_n[lo]
    s_left = csum_s[i] - csum_s[lo]
    n_right = n_tot - n_left
    s_right = s_tot - s_left
    ok = (n_left >= min_count) & (n_right >= min_count) & (n_left > 0) & (n_right > 0)
    if not ok.any():
        return None, 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = s_left**2 / n_left + s_right**2 / n_right - s_tot**2 / n_tot
    gain = np.where(ok, gain, -np.inf)
    k = int(np.argmax(gain))
    return int(i[k]), float(gain[k])


def tree_split(values, effects, n_target_bins: int, min_bin_count: int = 1, weights=None) -> list[float]:
    """Greedy best-first variance-reduction splits of one variable.

    Returns split points (each the smallest value of its right-hand leaf).
    """
    v = np.asarray(values, dtype=float)
    e = np.asarray(effects, dtype=float)
    w = np.ones(len(v)) if weights is None else np.asarray(weights, dtype=float)
    if len(v) == 0 or n_target_bins < 2:
        return []
    u, inv = np.unique(v, return_inverse=True)
    n = np.bincount(inv, weights=w, minlength=len(u))
    s = np.bincount(inv, weights=w * e, minlength=len(u))
    csum_n = np.concatenate([[0.0], np.cumsum(n)])
    csum_s = np.concatenate([[0.0], np.cumsum(s)])
    total_ss = float(np.sum(w * (e - np.average(e, weights=w)) ** 2)) if len(e) else 0.0
    tiny = 1e-12 * max(total_ss, 1e-300)
    if total_ss <= 0:
        return []
    leaves = [(0, len(u))]
    splits: list[int] = []
    cand = {leaf: _best_split(csum_n, csum_s, *leaf, min_bin_count) for leaf in leaves}
    while len(leaves) < n_target_bins:
        best_leaf, best = None, (None, tiny)
        for leaf in leaves:
            idx, gain = cand[leaf]
            if idx is not None and gain > best[1]:
                best_leaf, best = leaf, (idx, gain)
        if best_leaf is None:
            break
        idx = best[0]
        leaves.remove(best_leaf)
        left, right = (best_leaf[0], idx), (idx, best_leaf[1])
        leaves += [left, right]
        cand[left] = _best_split(csum_n, csum_s, *left, min_bin_count)
        cand[right] = _best_split(csum_n, csum_s, *right, min_bin_count)
        splits.append(idx)
    return sorted(float(u[i]) for i in splits)


def _dedupe(points: Iterable[float], rtol: float) -> list[float]:
    out: list[float] = []
    for p in sorted(points):
        if out and abs(p - out[-1]) <= rtol * max(abs(p), abs(out[-1]), 1e-300):
            continue
        out.append(p)
    return out


def enforce_min_count(split_points, values, min_count: int, max_bins: int | None = None) -> list[float]:
    """Merge bins below ``min_count`` into their smaller neighbour; cap the bin count."""
    splits = list(split_points)
    v = np.asarray(values, dtype=float)
    while splits:
        counts = np.bincount(np.searchsorted(splits, v, side="right"), minlength=len(splits) + 1)
        small = np.flatnonzero(counts < min_count)
        too_many = max_bins is not None and len(counts) > max_bins
        if len(small) == 0 and not too_many:
            break
        if len(small):
            b = int(small[np.argmin(counts[small])])
            if b == 0:
                drop = 0
            elif b == len(counts) - 1:
                drop = b - 1
            else:
                drop = b - 1 if counts[b - 1] <= counts[b + 1] else b
        else:
            pair = counts[:-1] + counts[1:]
            drop = int(np.argmin(pair))
        del splits[drop]
    return splits


def merge_splits(
    split_lists: Sequence[Sequence[float]],
    variable: str = "",
    values=None,
    min_bin_count: int = 0,
    max_bins: int | None = None,
    rtol: float = 1e-9,
) -> BinningSpec:
    """Union of per-hazard split points, sorted and deduplicated.

    With ``values`` given, bins holding fewer than ``min_bin_count`` values are
    merged with their smaller neighbour and at most ``max_bins`` bins are kept.
    """
    merged = _dedupe((p for lst in split_lists for p in lst), rtol)
    if values is not None and merged:
        merged = enforce_min_count(merged, values, min_bin_count, max_bins)
    return BinningSpec(variable, merged, min_bin_count, max_bins or 0)


def integer_level_spec(variable: str, values, cap: int, min_count: int) -> BinningSpec:
    """Categorise a positive integer time variable by raw level, capped at ``cap``."""
    splits = [float(k) for k in range(2, int(cap) + 1)]
    splits = enforce_min_count(splits, values, min_count)
    return BinningSpec(variable, splits, min_count, int(cap))


def _one_hot(index: np.ndarray, n_levels: int, reference: int) -> np.ndarray:
    cols = [k for k in range(n_levels) if k != reference]
    out = np.zeros((len(index), len(cols)))
    for j, k in enumerate(cols):
        out[:, j] = index == k
    return out


def bin_continuous(
    variable: str,
    values,
    in_state_time,
    transitions,
    class_names: Sequence[str],
    rng: np.random.Generator,
    n_groups: int = 5,
    min_bin_count: int = 30,
    max_state_level: int = 12,
    n_bootstrap: int = 10,
    bootstrap_size: int = 100_000,
    span: float = 0.75,
    hazards: Sequence[int] | None = None,
) -> BinningSpec:
    """Full binning pipeline for one continuous variable of one state data set.

    The smoothed hazard effects are averaged over bootstrap resamples before
    the tree step, then per-hazard splits are merged.
    """
    v = np.asarray(values, dtype=float)
    t = np.minimum(np.asarray(in_state_time, dtype=int), max_state_level)
    y = np.asarray(transitions, dtype=int)
    n = len(v)
    if n == 0:
        return BinningSpec(variable, [], min_bin_count, n_groups)
    at, inv = np.unique(v, return_inverse=True)
    K = len(class_names)
    if hazards is None:
        hazards = list(range(1, K))
    acc = {e: np.zeros(len(at)) for e in hazards}
    hits = {e: 0 for e in hazards}
    size = min(bootstrap_size, n)
    for _ in range(n_bootstrap):
        idx = rng.integers(0, n, size=size)
        vb, tb, yb = v[idx], t[idx], y[idx]
        groups = quantile_groups(vb)
        n_g = len(groups.mediods)
        if n_g < 2:
            continue
        g_ref = int(np.argmax(groups.counts))
        t_levels, t_index = np.unique(tb, return_inverse=True)
        t_ref = int(np.argmax(np.bincount(t_index)))
        X = np.hstack([
            np.ones((size, 1)),
            _one_hot(groups.index, n_g, g_ref),
            _one_hot(t_index, len(t_levels), t_ref),
        ])
        try:
            fit = fit_multinomial(DesignMatrix(X, yb, list(class_names)), max_iter=50, tol=1e-6,
                                  ridge=1e-4, reference=0)
        except DegenerateResponseError:
            continue
        g_cols = [k for k in range(n_g) if k != g_ref]
        others = [k for k in fit.active if k != fit.reference]
        for e in hazards:
            if e not in others:
                continue
            row = fit.coefficients[others.index(e)]
            effect = np.zeros(n_g)
            effect[g_cols] = row[1:1 + len(g_cols)]
            acc[e] += smooth_effects(groups.mediods, effect, at, span)
            hits[e] += 1
    lists = []
    for e in hazards:
        if hits[e] == 0:
            continue
        smoothed = acc[e] / hits[e]
        lists.append(tree_split(v, smoothed[inv], n_groups, min_bin_count))
    return merge_splits(lists, variable, v, min_bin_count, n_groups)
