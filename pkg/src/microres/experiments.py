"""Synthetic-truth experiments shared by the acceptance tests and the scripts.

``recovery_check`` fits the estimation layers to a large portfolio drawn
from a known four-state model and reports estimate/truth pairs.
``unbiasedness_trial`` runs the full fit-and-simulate pipeline on one
portfolio and compares the predictive distribution of the open-claim
reserve with the realised one.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .claims_data import TRANSITIONS
from .config import ModelConfig
from .evaluation import percentage_error
from .glm import DesignMatrix, fit_multinomial
from .payment_model import fit_components, fit_mixture_weights
from .pipeline import fit_all, open_states
from .simulator import simulate_portfolio
from .synthetic import PaymentLaw, Portfolio, SyntheticSpec, generate_portfolio

RECOVERY_HAZARDS = [[0.62, 0.35, 0.0, 0.03], [0.55, 0.2, 0.15, 0.10], [0.5, 0.15, 0.2, 0.15], [0.45, 0.1, 0.25, 0.2]]
RECOVERY_LAW = PaymentLaw([-1.5, 0.0, 3.5], (1.0, 0.2), (2.0, 0.3), [(-0.7, 0.5), (1.5, 1.0)],
                          [0.35, 0.05, 0.15, 0.45], [0.0, 0.0, 0.0, 0.5])


def recovery_spec(n_claims: int = 50_000) -> SyntheticSpec:
    """Unit-scale payments so the right tail is GPD(scale 2, shape 0.3)."""
    return SyntheticSpec(n_claims, dt.date(2005, 1, 1), dt.date(2009, 12, 31), 0.8, 0.3,
                         [list(h) for h in RECOVERY_HAZARDS], [RECOVERY_LAW] * 4)


def recovery_config() -> ModelConfig:
    return ModelConfig(min_pay_val=0.01, max_mod=4)


@dataclass
class Recovery:
    hazards: np.ndarray  # intercept-only estimates, one row per model index
    true_hazards: np.ndarray
    gpd_right: tuple[float, float]  # (scale, shape)
    gpd_left: tuple[float, float]
    segment_coef: float  # log-odds of the last bin vs the first for segment B
    true_segment_coef: float
    n_payments: int
    n_right: int


def _state_frequencies(pf: Portfolio, config: ModelConfig) -> np.ndarray:
    """Intercept-only multinomial fit per model index on the generated state sequences."""
    counts: list[list[int]] = [[] for _ in range(config.max_mod)]
    code = {t: i for i, t in enumerate(TRANSITIONS)}
    for h in pf.histories:
        last = 0
        state = 0
        for k, transition, _ in h.events:
            m = min(state, config.max_mod - 1)
            counts[m].extend([0] * (k - last - 1))
            counts[m].append(code[transition])
            last = k
            state += transition == "P"
    out = np.zeros((config.max_mod, len(TRANSITIONS)))
    for m, y in enumerate(counts):
        y = np.asarray(y, dtype=int)
        present = np.unique(y)
        design = DesignMatrix(np.ones((len(y), 1)), np.searchsorted(present, y),
                              [TRANSITIONS[c] for c in present], ["(intercept)"])
        fit = fit_multinomial(design)
        out[m, present] = fit.predict(np.ones((1, 1)))[0]
    return out


def recovery_check(seed: int = 0, n_claims: int = 50_000) -> Recovery:
    spec = recovery_spec(n_claims)
    config = recovery_config()
    pf = generate_portfolio(spec, config, seed=seed)
    hazards = _state_frequencies(pf, config)
    pays, seg = [], []
    for h in pf.histories:
        for _, transition, amount in h.events:
            if transition != "TN":
                pays.append(amount)
                seg.append(h.segment == "B")
    y = np.asarray(pays, dtype=float)
    splits = np.asarray(RECOVERY_LAW.splits)
    left, right, _, _ = fit_components(y, splits)
    bins = np.searchsorted(splits, y, side="right")
    X = np.column_stack([np.ones(len(y)), np.asarray(seg, dtype=float)])
    wfit = fit_mixture_weights(bins, X, len(splits) + 1, ["(intercept)", "segmentB"], config)
    others = [k for k in wfit.active if k != wfit.reference]
    coef = float(wfit.coefficients[others.index(len(splits)), 1])
    effect = RECOVERY_LAW.segment_effect
    return Recovery(hazards, np.asarray(RECOVERY_HAZARDS), (right.scale, right.shape), (left.scale, left.shape),
                    coef, effect[3] - effect[0], len(y), int(np.sum(y >= splits[-1])))


# -- end-to-end unbiasedness ------------------------------------------------------

UNBIASED_HAZARDS = [[0.8, 0.17, 0.0, 0.03], [0.75, 0.12, 0.08, 0.05], [0.7, 0.1, 0.1, 0.1], [0.65, 0.1, 0.12, 0.13]]
UNBIASED_LAW = PaymentLaw([-1230.0, 0.0, 3500.0], (800.0, 0.2), (4000.0, 0.3), [(-475.0, 400.0), (1400.0, 900.0)],
                          [0.05, 0.05, 0.65, 0.25], [])
UNBIASED_AS_OF = dt.date(2012, 12, 31)


def unbiasedness_spec(n_claims: int = 19_500) -> SyntheticSpec:
    """Three accident years; about 5,100 claims are open at the evaluation date."""
    return SyntheticSpec(n_claims, dt.date(2010, 1, 1), UNBIASED_AS_OF, 0.8, 0.3,
                         [list(h) for h in UNBIASED_HAZARDS], [UNBIASED_LAW] * 4)


@dataclass
class Trial:
    seed: int
    n_open: int
    truth: float
    mean: float
    lower: float
    upper: float

    @property
    def pe(self) -> float:
        return percentage_error(self.mean, self.truth)

    @property
    def covered(self) -> bool:
        return self.lower <= self.truth <= self.upper


def unbiasedness_trial(seed: int, n_open: int = 5_000, n_sims: int = 200, workers: int = 1) -> Trial:
    """Fit on the censored log, simulate the first ``n_open`` open claims, score the RBNS total."""
    config = ModelConfig(payment_mode="sample")
    pf = generate_portfolio(unbiasedness_spec(), config, seed=seed)
    claims = pf.claims(UNBIASED_AS_OF)
    fitted = fit_all(claims, config, UNBIASED_AS_OF, with_ibnr=False)
    states, paid = open_states(claims, config, UNBIASED_AS_OF)
    if len(states) < n_open:
        raise ValueError(f"portfolio {seed} has only {len(states)} open claims")
    states, paid = states[:n_open], paid[:n_open]
    dist = simulate_portfolio(states, fitted.models, config, n_sims=n_sims, seed=seed, workers=workers,
                              cum_at_eval=paid)
    reserves = pf.true_reserves(UNBIASED_AS_OF)
    truth = float(sum(reserves[p] for p in dist.policy_ids))
    lo, hi = np.quantile(dist.totals, [0.05, 0.95])
    return Trial(seed, n_open, truth, float(dist.totals.mean()), float(lo), float(hi))
