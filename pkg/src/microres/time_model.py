"""Per-state competing-risk hazard models and the reporting-delay model.

Each model index ``m`` gets a multinomial logit over the period outcomes
(N, P, TN, TP) with N as reference.  Small data sets fall back to an
intercept-only fit or to the previous state's model.  Forcing rules modify
predicted hazards during simulation so every trajectory terminates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .binning import BinningSpec, bin_continuous, integer_level_spec
from .claims_data import TRANSITIONS, CovariateVector, PeriodTable, StateDataset
from .config import ModelConfig
from .features import CONTINUOUS_VARS, FeatureEncoder, build_encoder, time_variables
from .glm import DegenerateResponseError, DesignMatrix, MultinomialFit, constant_fit, fit_binomial, fit_multinomial
from .rng import substream

log = logging.getLogger(__name__)

CLASS_NAMES = list(TRANSITIONS)
FULL, NO_COVARIATES, POOLED = "full", "no_covariates", "pooled"


class PortfolioTooSmall(ValueError):
    pass


@dataclass
class HazardModel:
    model_index: int
    fit: MultinomialFit
    encoder: FeatureEncoder
    fallback: str
    n_rows: int
    specs: dict[str, BinningSpec] = field(default_factory=dict)

    def hazards(self, columns: Mapping[str, np.ndarray], n: int | None = None) -> np.ndarray:
        """Outcome probabilities, shape ``(n, 4)`` in (N, P, TN, TP) order."""
        X = self.encoder.transform(columns, n)
        return self.fit.predict(X)

    def to_dict(self) -> dict:
        return {
            "model_index": self.model_index,
            "fallback": self.fallback,
            "n_rows": self.n_rows,
            "fit": self.fit.to_dict(),
            "encoder": self.encoder.to_dict(),
            "specs": {k: v.to_dict() for k, v in self.specs.items()},
        }

    @classmethod
    def constant(cls, model_index: int, probs: Sequence[float]) -> "HazardModel":
        """Covariate-free model returning ``probs`` for every input."""
        probs = np.asarray(probs, dtype=float)
        active = [k for k in range(4) if probs[k] > 0]
        ref = active[0]
        coef = np.log(probs[active[1:]] / probs[ref]).reshape(-1, 1)
        fit = MultinomialFit(list(CLASS_NAMES), ["(intercept)"], active, ref, coef, 0.0)
        return cls(model_index, fit, FeatureEncoder([]), NO_COVARIATES, 0)

    @classmethod
    def from_dict(cls, data: dict) -> "HazardModel":
        return cls(
            data["model_index"],
            MultinomialFit.from_dict(data["fit"]),
            FeatureEncoder.from_dict(data["encoder"]),
            data["fallback"],
            data["n_rows"],
            {k: BinningSpec.from_dict(v) for k, v in data.get("specs", {}).items()},
        )


def hazards_for(model: HazardModel, x: CovariateVector) -> np.ndarray:
    values = x.as_dict()
    columns = {k: np.array([v], dtype=object if isinstance(v, str) else float) for k, v in values.items()}
    return model.hazards(columns, 1)[0]


def force_state_exit(h: np.ndarray) -> np.ndarray:
    """Move the stay probability to the three exits in equal thirds."""
    h = np.array(h, dtype=float)
    stay = h[..., 0].copy()
    h[..., 0] = 0.0
    h[..., 1:] += stay[..., None] / 3.0
    return h


def force_terminal_only(h: np.ndarray) -> np.ndarray:
    """Fold the payment-transition probability into the terminal payment."""
    h = np.array(h, dtype=float)
    h[..., 3] += h[..., 1]
    h[..., 1] = 0.0
    return h


def force_process_exit(h: np.ndarray) -> np.ndarray:
    """Only terminal outcomes remain; P goes to TP and N is split evenly."""
    h = np.array(h, dtype=float)
    stay = h[..., 0].copy()
    h[..., 3] += h[..., 1] + stay / 2.0
    h[..., 2] += stay / 2.0
    h[..., 0] = 0.0
    h[..., 1] = 0.0
    return h


def apply_forcing(h: np.ndarray, state, in_state_time, in_proc_time, config: ModelConfig) -> np.ndarray:
    """Forcing rules for arrays of hazards with the matching claim clocks."""
    state = np.asarray(state)
    h = np.array(h, dtype=float)
    terminal_only = state >= config.npmax - 1
    if terminal_only.any():
        h[terminal_only] = force_terminal_only(h[terminal_only])
    timed_out = np.asarray(in_state_time) >= config.fixed_time_max
    if timed_out.any():
        h[timed_out] = force_state_exit(h[timed_out])
        # at the last allowed state the exit share meant for P also goes to TP
        both = timed_out & terminal_only
        if both.any():
            h[both] = force_terminal_only(h[both])
    capped = np.asarray(in_proc_time) >= config.process_cap
    if capped.any():
        h[capped] = force_process_exit(h[capped])
    return h


def state_binning_specs(table: PeriodTable, model_index: int, config: ModelConfig,
                        rng: np.random.Generator) -> dict[str, BinningSpec]:
    """Binning specs for the covariates of one state's data set."""
    specs: dict[str, BinningSpec] = {}
    cols = table.columns
    caps = {"deltRep": config.n_max_lev_in_proc, "inProcTime": config.n_max_lev_in_proc,
            "inStateTime": config.n_max_lev_in_state}
    present = [k for k in (1, 2, 3) if np.sum(table.transition == k) > 0]
    for name in time_variables(model_index):
        values = cols[name]
        if name == "fastRep":
            specs[name] = BinningSpec(name, [1.0])
        elif name in CONTINUOUS_VARS:
            ok = ~np.isnan(values)
            if ok.sum() == 0:
                specs[name] = BinningSpec(name, [])
                continue
            specs[name] = bin_continuous(
                name, values[ok], cols["inStateTime"][ok], table.transition[ok], CLASS_NAMES, rng,
                n_groups=config.n_groups, min_bin_count=config.n_min_lev,
                max_state_level=config.n_max_lev_in_state, n_bootstrap=config.n_bootstrap,
                bootstrap_size=config.bootstrap_size, span=config.loess_span, hazards=present,
            )
        else:
            specs[name] = integer_level_spec(name, values, caps[name], config.n_min_time_lev)
    return specs


def _fit_classes(X: np.ndarray, y: np.ndarray, classes: Sequence[str], columns: list[str],
                 config: ModelConfig, reference: int = 0) -> MultinomialFit:
    design = DesignMatrix(X, y, list(classes), columns)
    try:
        return fit_multinomial(design, max_iter=config.glm_max_iter, tol=config.glm_tol,
                               ridge=config.glm_ridge, reference=reference)
    except DegenerateResponseError:
        present = int(np.bincount(y, minlength=len(classes)).argmax())
        return constant_fit(classes, present, columns)


def fit_time_models(datasets: Sequence[StateDataset], config: ModelConfig,
                    base_names: Sequence[str] = ()) -> list[HazardModel]:
    """Hazard models for model indices ``0 .. maxMod-1`` with the size fallbacks."""
    models: list[HazardModel] = []
    for ds in datasets:
        m = ds.model_index
        table = ds.table
        n = ds.n_rows
        if m == 0 and n < config.n_min_no_mod_t:
            raise PortfolioTooSmall(
                f"state 0 has {n} rows, fewer than nMinNoModT={config.n_min_no_mod_t}")
        if n < config.n_min_no_mod_t:
            prev = models[-1]
            models.append(HazardModel(m, prev.fit, prev.encoder, POOLED, n, prev.specs))
            continue
        rng = substream(config.rng_seed, 1000 + m)
        specs = state_binning_specs(table, m, config, rng)
        encoder = build_encoder(table.columns, specs, table.base_names, config.n_min_lev)
        p = encoder.n_columns
        if n >= max(config.n_min_mod_t, p * config.n_times_params_t):
            fallback = FULL
        else:
            encoder = FeatureEncoder([])
            fallback = NO_COVARIATES
        X = encoder.transform(table.columns, n)
        fit = _fit_classes(X, table.transition, CLASS_NAMES, encoder.column_names, config)
        models.append(HazardModel(m, fit, encoder, fallback, n, specs))
    return models


def transition_mix(table: PeriodTable) -> np.ndarray:
    """Empirical share of each outcome in a data set."""
    counts = np.bincount(table.transition, minlength=4).astype(float)
    return counts / counts.sum() if counts.sum() else counts


def partial_dependence(model: HazardModel, table: PeriodTable, variable: str) -> list[tuple[str, np.ndarray]]:
    """Average predicted hazards with ``variable`` set to each of its levels."""
    X = model.encoder.transform(table.columns, len(table))
    start = 1
    target = None
    for v in model.encoder.variables:
        width = len(v.kept)
        if v.name == variable:
            target = v
            break
        start += width
    if target is None:
        return []
    labels = target.spec.labels() if hasattr(target, "spec") else list(target.levels)
    out = []
    n_levels = len(labels)
    for level in range(n_levels):
        if level != target.reference and level not in target.kept:
            continue
        Xl = X.copy()
        Xl[:, start:start + len(target.kept)] = 0.0
        if level in target.kept:
            Xl[:, start + target.kept.index(level)] = 1.0
        out.append((labels[level], model.fit.predict(Xl).mean(axis=0)))
    return out


@dataclass
class ReportingModel:
    """Per-period probability that an occurred claim gets reported."""

    probability: float
    fit: MultinomialFit | None = None
    constant: bool = True
    n_claims: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.probability <= 1:
            raise ValueError(f"reporting probability must be in (0, 1], got {self.probability}")

    def to_dict(self) -> dict:
        return {"probability": self.probability, "constant": self.constant, "n_claims": self.n_claims,
                "fit": self.fit.to_dict() if self.fit is not None else None}

    @classmethod
    def from_dict(cls, data: dict) -> "ReportingModel":
        fit = MultinomialFit.from_dict(data["fit"]) if data.get("fit") else None
        return cls(data["probability"], fit, data.get("constant", True), data.get("n_claims", 0))


def fit_reporting_model(delays, config: ModelConfig) -> ReportingModel:
    """Bernoulli per-period reporting model from reporting delays in periods (>= 1).

    Each claim contributes ``delay - 1`` unreported periods followed by one
    reporting period.
    """
    delays = np.asarray(delays, dtype=int)
    if config.reporting_constant is not None:
        return ReportingModel(float(config.reporting_constant), None, True, len(delays))
    if len(delays) == 0:
        raise ValueError("no reported claims to fit the reporting model")
    if np.any(delays < 1):
        raise ValueError("reporting delays must be at least one period")
    if np.all(delays == 1):
        return ReportingModel(1.0, None, True, len(delays))
    # weighted rows: per claim (delay-1) failures and one success
    X = np.ones((2, 1))
    y = np.array([0, 1])
    w = np.array([float((delays - 1).sum()), float(len(delays))])
    fit = fit_binomial(X, y, max_iter=config.glm_max_iter, tol=config.glm_tol, ridge=0.0, weights=w)
    prob = float(fit.predict(np.ones((1, 1)))[0, 1])
    return ReportingModel(prob, fit, False, len(delays))
