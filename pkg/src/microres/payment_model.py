"""Spliced payment severity per state.

The real line is cut at ``b_1 < ... < b_{L-1}`` into ``L`` bins.  Below ``b_1``
the reflected excess ``b_1 - Y`` is generalised Pareto, above ``b_{L-1}`` the
excess ``Y - b_{L-1}`` is generalised Pareto, and each body bin holds a
normal distribution truncated to the bin.  Bin probabilities come from a
multinomial logit on the covariates (bin 1 is the reference class), so the
expected payment is the dot product of bin probabilities and bin means.
Amounts are in currency units.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize, stats

from .binning import BinningSpec
from .claims_data import PeriodTable
from .config import ModelConfig
from .features import FeatureEncoder, build_encoder
from .glm import DegenerateResponseError, DesignMatrix, MultinomialFit, constant_fit, fit_multinomial

log = logging.getLogger(__name__)

SHAPE_BOUNDS = (-0.5, 0.95)
MIN_TAIL_POINTS = 30
MIN_BODY_POINTS = 30


# -- generalised Pareto --------------------------------------------------------

@dataclass
class GpdFit:
    scale: float
    shape: float
    n: int
    empirical_mean: float
    flags: list[str] = field(default_factory=list)

    @property
    def mean_excess(self) -> float:
        """Mean of the excess; the empirical mean when the shape cap was hit."""
        if "shape_cap" in self.flags or "degenerate" in self.flags:
            return self.empirical_mean
        return self.scale / (1.0 - self.shape)

    def pdf(self, z) -> np.ndarray:
        return stats.genpareto.pdf(z, self.shape, scale=self.scale)

    def ppf(self, u) -> np.ndarray:
        return stats.genpareto.ppf(u, self.shape, scale=self.scale)

    def to_dict(self) -> dict:
        return {"scale": self.scale, "shape": self.shape, "n": self.n,
                "empirical_mean": self.empirical_mean, "flags": list(self.flags)}

    @classmethod
    def from_dict(cls, d: dict) -> "GpdFit":
        return cls(d["scale"], d["shape"], d["n"], d["empirical_mean"], list(d.get("flags", [])))


def gpd_loglik(z: np.ndarray, scale: float, shape: float) -> float:
    if scale <= 0:
        return -np.inf
    if abs(shape) < 1e-9:
        return float(-len(z) * np.log(scale) - z.sum() / scale)
    t = 1.0 + shape * z / scale
    if np.any(t <= 0):
        return -np.inf
    return float(-len(z) * np.log(scale) - (1.0 + 1.0 / shape) * np.log(t).sum())


def gpd_gradient(z: np.ndarray, scale: float, shape: float) -> np.ndarray:
    """Gradient of the log-likelihood in (scale, shape)."""
    n = len(z)
    if abs(shape) < 1e-9:
        d_scale = -n / scale + z.sum() / scale**2
        d_shape = 0.5 * ((z / scale) ** 2).sum() - (z / scale).sum()
        return np.array([d_scale, d_shape])
    w = z / scale
    t = 1.0 + shape * w
    d_scale = -n / scale + (1.0 + shape) / scale * (w / t).sum()
    d_shape = np.log(t).sum() / shape**2 - (1.0 + 1.0 / shape) * (w / t).sum()
    return np.array([d_scale, d_shape])


def _profile_scale(z: np.ndarray, shape: float) -> tuple[float, float]:
    """Scale maximising the likelihood for a fixed shape."""
    zmax = z.max()
    mean = z.mean()
    lo = max(1e-8 * mean, -shape * zmax * (1 + 1e-9)) if shape < 0 else 1e-8 * mean
    hi = max(50.0 * mean, lo * 10)
    res = optimize.minimize_scalar(
        lambda ls: -gpd_loglik(z, np.exp(ls), shape),
        bounds=(np.log(lo), np.log(hi)), method="bounded", options={"xatol": 1e-10},
    )
    return float(np.exp(res.x)), float(-res.fun)


def fit_gpd(excesses) -> GpdFit:
    """Maximum likelihood generalised Pareto fit of non-negative excesses.

    The shape maximises the profile likelihood: a grid over (-0.5, 0.95)
    brackets the optimum, which is then refined by bounded Brent search.
    """
    z = np.asarray(excesses, dtype=float)
    if np.any(z < 0):
        raise ValueError("excesses must be non-negative")
    n = len(z)
    mean = float(z.mean()) if n else 0.0
    if n == 0 or np.ptp(z) == 0:
        return GpdFit(max(mean, 1e-8), 0.0, n, mean, ["degenerate"])
    if n < MIN_TAIL_POINTS:
        return GpdFit(mean, 0.0, n, mean, ["exponential_fallback"])
    grid = np.linspace(SHAPE_BOUNDS[0] + 0.01, SHAPE_BOUNDS[1] - 0.01, 95)
    prof = np.array([_profile_scale(z, s)[1] for s in grid])
    k = int(np.argmax(prof))
    lo = grid[k - 1] if k > 0 else SHAPE_BOUNDS[0]
    hi = grid[k + 1] if k + 1 < len(grid) else SHAPE_BOUNDS[1]
    # refine the shape on the profile likelihood between the neighbouring grid points
    res = optimize.minimize_scalar(lambda s: -_profile_scale(z, s)[1], bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-9})
    shape = float(res.x)
    scale, value = _profile_scale(z, shape)
    if value < prof[k]:
        shape = float(grid[k])
        scale, value = _profile_scale(z, shape)
    flags = []
    if shape >= SHAPE_BOUNDS[1] - 1e-6:
        flags.append("shape_cap")
    return GpdFit(scale, shape, n, mean, flags)


# -- truncated normal ----------------------------------------------------------

@dataclass
class TruncNormFit:
    lower: float
    upper: float
    mu: float
    sigma: float
    n: int
    empirical_mean: float
    flags: list[str] = field(default_factory=list)

    def _std(self):
        return (self.lower - self.mu) / self.sigma, (self.upper - self.mu) / self.sigma

    @property
    def mean(self) -> float:
        if "empirical" in self.flags:
            return self.empirical_mean
        a, b = self._std()
        return float(stats.truncnorm.mean(a, b, loc=self.mu, scale=self.sigma))

    def pdf(self, y) -> np.ndarray:
        a, b = self._std()
        return stats.truncnorm.pdf(y, a, b, loc=self.mu, scale=self.sigma)

    def ppf(self, u) -> np.ndarray:
        a, b = self._std()
        return stats.truncnorm.ppf(u, a, b, loc=self.mu, scale=self.sigma)

    def to_dict(self) -> dict:
        return {"lower": self.lower, "upper": self.upper, "mu": self.mu, "sigma": self.sigma, "n": self.n,
                "empirical_mean": self.empirical_mean, "flags": list(self.flags)}

    @classmethod
    def from_dict(cls, d: dict) -> "TruncNormFit":
        return cls(d["lower"], d["upper"], d["mu"], d["sigma"], d["n"], d["empirical_mean"], list(d.get("flags", [])))


def fit_truncated_normal(sample, lower: float, upper: float) -> TruncNormFit:
    """Maximum likelihood normal truncated to ``[lower, upper)``.

    With fewer than 30 points the bin mean is the sample mean (flagged).
    """
    x = np.asarray(sample, dtype=float)
    width = upper - lower
    if width <= 0:
        raise ValueError("empty bin")
    n = len(x)
    emp = float(x.mean()) if n else 0.5 * (lower + upper)
    if n < MIN_BODY_POINTS or np.ptp(x) == 0:
        sd = float(x.std()) if n > 1 and np.ptp(x) > 0 else width / np.sqrt(12)
        return TruncNormFit(lower, upper, emp, max(sd, 1e-9 * width), n, emp, ["empirical"])
    mu_bounds = (lower - 20 * width, upper + 20 * width)
    ls_bounds = (np.log(width * 1e-4), np.log(width * 100))

    def nll(theta):
        mu, ls = theta
        sigma = np.exp(ls)
        a, b = (lower - mu) / sigma, (upper - mu) / sigma
        val = -stats.truncnorm.logpdf(x, a, b, loc=mu, scale=sigma).sum()
        return val if np.isfinite(val) else 1e300

    sd0 = max(float(x.std()), width * 1e-3)
    res = optimize.minimize(nll, x0=[emp, np.log(sd0)], method="L-BFGS-B", bounds=[mu_bounds, ls_bounds],
                            options={"ftol": 1e-14, "gtol": 1e-9})
    mu, sigma = float(res.x[0]), float(np.exp(res.x[1]))
    return TruncNormFit(lower, upper, mu, sigma, n, emp, [])


# -- split points --------------------------------------------------------------

@dataclass
class SplitChoice:
    splits: np.ndarray
    flags: list[str]
    mean_excess: list[tuple[float, float, int]]


def mean_excess_table(payments, probs: Sequence[float] = (0.5, 0.75, 0.8, 0.85, 0.9, 0.95, 0.975, 0.99)):
    """(threshold, mean excess, count) rows for both tails of a payment sample."""
    y = np.asarray(payments, dtype=float)
    rows: list[tuple[float, float, int]] = []
    neg = -y[y < 0]
    for q in probs[::-1]:
        if len(neg):
            u = float(np.quantile(neg, q))
            exc = neg[neg > u] - u
            rows.append((-u, float(exc.mean()) if len(exc) else 0.0, int(len(exc))))
    pos = y[y > 0]
    for q in probs:
        if len(pos):
            u = float(np.quantile(pos, q))
            exc = pos[pos > u] - u
            rows.append((u, float(exc.mean()) if len(exc) else 0.0, int(len(exc))))
    return rows


def select_split_points(payments, config: ModelConfig, state: int | None = None) -> SplitChoice:
    """Outer thresholds at tail quantiles, an inner split at 0, or the configured override."""
    y = np.asarray(payments, dtype=float)
    L = config.n_bins
    flags: list[str] = []
    table = mean_excess_table(y) if len(y) else []
    if state is not None and state in config.payment_splits:
        return SplitChoice(np.array(config.payment_splits[state], dtype=float), ["configured"], table)
    if len(y) == 0:
        raise ValueError("no payments to choose split points from")
    lo_q, hi_q = config.split_quantiles
    b_lo = float(np.quantile(y, lo_q))
    b_hi = float(np.quantile(y, hi_q))
    if b_lo >= 0:
        b_lo = min(float(y.min()), 0.0) - 1.0
        flags.append("left_bins_empty")
    if b_hi <= 0:
        b_hi = max(float(y.max()), 0.0) + 1.0
        flags.append("right_bins_empty")
    inner = [0.0]
    if L > 4:
        body = y[(y > 0) & (y < b_hi)]
        probs = np.arange(1, L - 3) / (L - 3)
        extra = np.quantile(body, probs) if len(body) else np.linspace(0, b_hi, L - 2)[1:-1]
        inner += sorted(set(float(e) for e in extra if 0 < e < b_hi))
        while len(inner) < L - 3:
            inner.append(0.5 * (inner[-1] + b_hi))
    splits = np.array([b_lo] + inner + [b_hi])
    return SplitChoice(splits, flags, table)


# -- spliced model -------------------------------------------------------------

@dataclass
class SplicedPaymentModel:
    model_index: int
    splits: np.ndarray
    left: GpdFit
    right: GpdFit
    body: list[TruncNormFit]
    weight_fit: MultinomialFit
    encoder: FeatureEncoder = field(default_factory=FeatureEncoder)
    fallback: str = "full"
    n_rows: int = 0
    flags: list[str] = field(default_factory=list)

    @property
    def n_bins(self) -> int:
        return len(self.splits) + 1

    @property
    def means(self) -> np.ndarray:
        """Component means of the bins, left tail first."""
        mu = [self.splits[0] - self.left.mean_excess]
        mu += [b.mean for b in self.body]
        mu.append(self.splits[-1] + self.right.mean_excess)
        return np.array(mu)

    def bin_probs(self, columns: Mapping[str, np.ndarray], n: int | None = None) -> np.ndarray:
        return self.weight_fit.predict(self.encoder.transform(columns, n))

    def bin_of(self, y) -> np.ndarray:
        return np.searchsorted(self.splits, np.asarray(y, dtype=float), side="right")

    def density(self, y, probs: np.ndarray) -> np.ndarray:
        """Spliced density at ``y`` for one bin-probability vector."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        out = np.zeros_like(y)
        b = self.bin_of(y)
        left = b == 0
        out[left] = probs[0] * self.left.pdf(self.splits[0] - y[left])
        for l, comp in enumerate(self.body, start=1):
            sel = b == l
            out[sel] = probs[l] * comp.pdf(y[sel])
        right = b == self.n_bins - 1
        out[right] = probs[-1] * self.right.pdf(y[right] - self.splits[-1])
        return out

    def component_quantile(self, component: int, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if component == 0:
            return self.splits[0] - self.left.ppf(u)
        if component == self.n_bins - 1:
            return self.splits[-1] + self.right.ppf(u)
        return self.body[component - 1].ppf(u)

    def to_dict(self) -> dict:
        return {
            "model_index": self.model_index, "splits": self.splits.tolist(),
            "left": self.left.to_dict(), "right": self.right.to_dict(),
            "body": [b.to_dict() for b in self.body], "weight_fit": self.weight_fit.to_dict(),
            "encoder": self.encoder.to_dict(), "fallback": self.fallback, "n_rows": self.n_rows,
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplicedPaymentModel":
        return cls(d["model_index"], np.array(d["splits"]), GpdFit.from_dict(d["left"]), GpdFit.from_dict(d["right"]),
                   [TruncNormFit.from_dict(b) for b in d["body"]], MultinomialFit.from_dict(d["weight_fit"]),
                   FeatureEncoder.from_dict(d["encoder"]), d["fallback"], d["n_rows"], list(d.get("flags", [])))


def fit_components(payments, splits) -> tuple[GpdFit, GpdFit, list[TruncNormFit], list[str]]:
    y = np.asarray(payments, dtype=float)
    splits = np.asarray(splits, dtype=float)
    flags: list[str] = []
    below = y[y < splits[0]]
    above = y[y >= splits[-1]]
    left = fit_gpd(splits[0] - below) if len(below) else GpdFit(1.0, 0.0, 0, 1.0, ["empty"])
    right = fit_gpd(above - splits[-1]) if len(above) else GpdFit(1.0, 0.0, 0, 1.0, ["empty"])
    if left.flags:
        flags.append("left:" + ",".join(left.flags))
    if right.flags:
        flags.append("right:" + ",".join(right.flags))
    body = []
    for lo, hi in zip(splits[:-1], splits[1:]):
        sel = y[(y >= lo) & (y < hi)]
        fit = fit_truncated_normal(sel, lo, hi)
        body.append(fit)
    return left, right, body, flags


def fit_mixture_weights(bins: np.ndarray, X: np.ndarray, n_bins: int, columns: list[str],
                        config: ModelConfig) -> MultinomialFit:
    names = [f"B{l + 1}" for l in range(n_bins)]
    design = DesignMatrix(X, bins, names, columns)
    try:
        return fit_multinomial(design, max_iter=config.glm_max_iter, tol=config.glm_tol,
                               ridge=config.glm_ridge, reference=0)
    except DegenerateResponseError:
        present = int(np.bincount(bins, minlength=n_bins).argmax())
        return constant_fit(names, present, columns)


def payment_specs(time_specs: Mapping[str, BinningSpec]) -> dict[str, BinningSpec]:
    specs = dict(time_specs)
    specs["terminal"] = BinningSpec("terminal", [1.0])
    return specs


def fit_payment_models(
    payment_tables: Sequence[PeriodTable],
    time_specs: Sequence[Mapping[str, BinningSpec]],
    config: ModelConfig,
) -> list[SplicedPaymentModel]:
    """Spliced payment model per model index, with the row-count fallbacks."""
    models: list[SplicedPaymentModel] = []
    for m, (table, specs) in enumerate(zip(payment_tables, time_specs)):
        n = len(table)
        if n < config.n_min_no_mod_p:
            if not models:
                raise ValueError(f"payment state {m} has {n} rows, fewer than nMinNoModP={config.n_min_no_mod_p}")
            prev = models[-1]
            models.append(SplicedPaymentModel(m, prev.splits, prev.left, prev.right, prev.body, prev.weight_fit,
                                              prev.encoder, "pooled", n, list(prev.flags)))
            continue
        y = table.payment
        choice = select_split_points(y, config, m)
        left, right, body, flags = fit_components(y, choice.splits)
        flags = choice.flags + flags
        pspecs = payment_specs(specs)
        usable = {k: v for k, v in pspecs.items() if k in table.columns}
        encoder = build_encoder(table.columns, usable, table.base_names, config.n_min_lev)
        p = encoder.n_columns
        if n >= max(config.n_min_mod_p, p * config.n_times_params_p):
            fallback = "full"
        else:
            encoder = FeatureEncoder([])
            fallback = "no_covariates"
        X = encoder.transform(table.columns, n)
        bins = np.searchsorted(choice.splits, y, side="right")
        wfit = fit_mixture_weights(bins, X, config.n_bins, encoder.column_names, config)
        models.append(SplicedPaymentModel(m, choice.splits, left, right, body, wfit, encoder, fallback, n, flags))
    return models


def expected_payment(model: SplicedPaymentModel, probs: np.ndarray) -> np.ndarray:
    """Dot product of bin probabilities (rows) with the component means."""
    return np.asarray(probs) @ model.means


def payment_from_uniforms(model: SplicedPaymentModel, probs: np.ndarray, u_bin, u_value) -> np.ndarray:
    """Inverse-CDF draw: bin from ``probs`` rows, then value within the bin."""
    probs = np.atleast_2d(probs)
    u_bin = np.atleast_1d(u_bin)
    u_value = np.atleast_1d(u_value)
    cum = np.cumsum(probs, axis=1)
    cum[:, -1] = 1.0
    comp = (u_bin[:, None] >= cum).sum(axis=1)
    comp = np.minimum(comp, model.n_bins - 1)
    # empty bins are never chosen: probability zero columns give equal cumsum steps
    out = np.empty(len(comp))
    for l in np.unique(comp):
        sel = comp == l
        out[sel] = model.component_quantile(int(l), u_value[sel])
    return out


def sample_payment(model: SplicedPaymentModel, probs: np.ndarray, rng: np.random.Generator, size: int = 1) -> np.ndarray:
    probs = np.broadcast_to(np.atleast_2d(probs), (size, model.n_bins))
    return payment_from_uniforms(model, probs, rng.random(size), rng.random(size))


def weights_from_probs(probs: Sequence[float]) -> MultinomialFit:
    """Intercept-only bin-weight model reproducing ``probs`` exactly."""
    probs = np.asarray(probs, dtype=float)
    names = [f"B{l + 1}" for l in range(len(probs))]
    active = [l for l in range(len(probs)) if probs[l] > 0]
    ref = active[0]
    coef = np.log(probs[active[1:]] / probs[ref]).reshape(-1, 1)
    return MultinomialFit(names, ["(intercept)"], active, ref, coef, 0.0)
