"""Monte-Carlo simulation of open (RBNS) and unreported (IBNR) claims.

Trajectories are simulated in vectorised batches of (claim, replication)
pairs.  Every uniform is drawn from :func:`microres.rng.counter_uniforms`
keyed by the claim, the replication, the period index and a lane, so a
trajectory does not depend on which batch or worker process it ran in.

Lanes: 0 selects the transition, 1 and 2 the payment bin and value (sample
mode only), 3 the reporting trial of an IBNR claim.
"""

from __future__ import annotations

import datetime as dt
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence, TextIO

import numpy as np

from .claims_data import P, TN, TP, OpenClaim
from .config import ModelConfig
from .features import CategoricalVariable, FeatureEncoder
from .ibnr_counts import IbnrCountModel, expected_ibnr, sample_ibnr, standardize_tail
from .payment_model import SplicedPaymentModel, expected_payment, payment_from_uniforms
from .rng import counter_uniforms, policy_key, substream
from .time_model import HazardModel, ReportingModel, apply_forcing

log = logging.getLogger(__name__)

LANE_TRANSITION, LANE_BIN, LANE_VALUE, LANE_REPORT = 0, 1, 2, 3
UNREPORTED, OPEN, CLOSED_TN, CLOSED_TP = "unreported", "open", "closed_tn", "closed_tp"


@dataclass
class ModelSet:
    """Everything the simulator needs from a fit."""

    time_models: list[HazardModel]
    payment_models: list[SplicedPaymentModel]
    reporting: ReportingModel | None = None
    ibnr: IbnrCountModel | None = None
    base_names: list[str] = field(default_factory=list)


@dataclass
class ClaimState:
    """A single claim's position in the multi-state process (amounts in units)."""

    policy_id: str
    state: int
    period: int  # next period to simulate, 1-based
    cum_paid: float
    delt_rep: int
    fast_rep: int
    last_payment: float | None = None
    last_payment_period: int | None = None
    cum_state_payments: float = 0.0
    base: dict[str, str] = field(default_factory=dict)
    phase: str = OPEN

    @property
    def in_state_time(self) -> int:
        return self.period if self.last_payment_period is None else self.period - self.last_payment_period

    @classmethod
    def from_open_claim(cls, claim: OpenClaim) -> "ClaimState":
        last = claim.payments[-1] if claim.payments else None
        return cls(
            claim.policy_id, claim.state, claim.next_period, claim.recorded_cum / 100, claim.delt_rep,
            claim.fast_rep, None if last is None else last[1] / 100, None if last is None else last[0],
            sum(c for _, c in claim.payments) / 100, dict(claim.base),
        )


@dataclass
class TrajectoryBatch:
    """Start states of many trajectories, one entry per (claim, replication)."""

    keys: np.ndarray  # uint64 claim keys
    reps: np.ndarray
    state: np.ndarray
    period: np.ndarray
    cum_paid: np.ndarray
    delt_rep: np.ndarray
    fast_rep: np.ndarray
    last_payment: np.ndarray  # NaN without payment
    last_payment_period: np.ndarray  # 0 without payment
    cum_state_payments: np.ndarray
    group: np.ndarray  # row into ``base`` arrays
    base: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.keys)

    def take(self, idx) -> "TrajectoryBatch":
        return TrajectoryBatch(
            self.keys[idx], self.reps[idx], self.state[idx], self.period[idx], self.cum_paid[idx],
            self.delt_rep[idx], self.fast_rep[idx], self.last_payment[idx], self.last_payment_period[idx],
            self.cum_state_payments[idx], self.group[idx], self.base,
        )


def batch_from_states(states: Sequence[ClaimState], n_sims: int, base_names: Sequence[str] = ()) -> TrajectoryBatch:
    """All (claim, replication) pairs, claim-major."""
    n = len(states)
    rep = np.tile(np.arange(n_sims), n)
    claim = np.repeat(np.arange(n), n_sims)

    def per_claim(values, dtype):
        return np.asarray(values, dtype=dtype)[claim] if n else np.zeros(0, dtype=dtype)

    keys = np.array([policy_key(s.policy_id) for s in states], dtype=np.uint64)
    base = {name: np.array([s.base.get(name, "") for s in states], dtype=object) for name in base_names}
    return TrajectoryBatch(
        keys=keys[claim] if n else np.zeros(0, dtype=np.uint64),
        reps=rep if n else np.zeros(0, dtype=int),
        state=per_claim([s.state for s in states], int),
        period=per_claim([s.period for s in states], int),
        cum_paid=per_claim([s.cum_paid for s in states], float),
        delt_rep=per_claim([s.delt_rep for s in states], float),
        fast_rep=per_claim([s.fast_rep for s in states], float),
        last_payment=per_claim([np.nan if s.last_payment is None else s.last_payment for s in states], float),
        last_payment_period=per_claim([s.last_payment_period or 0 for s in states], int),
        cum_state_payments=per_claim([s.cum_state_payments for s in states], float),
        group=claim if n else np.zeros(0, dtype=int),
        base=base,
    )


# -- uniform sources -----------------------------------------------------------

UniformSource = Callable[[np.ndarray, int, int], np.ndarray]


def counter_source(seed: int, batch: TrajectoryBatch) -> UniformSource:
    def draw(idx: np.ndarray, step: int, lane: int) -> np.ndarray:
        return counter_uniforms(seed, batch.keys[idx], batch.reps[idx], step, lane)
    return draw


def rng_source(rng: np.random.Generator) -> UniformSource:
    def draw(idx: np.ndarray, step: int, lane: int) -> np.ndarray:
        return rng.random(len(idx))
    return draw


# -- covariates ----------------------------------------------------------------

def _encoded_base(encoder: FeatureEncoder, base: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Integer level codes per claim group for the encoder's categorical variables."""
    out = {}
    for v in encoder.variables:
        if isinstance(v, CategoricalVariable):
            values = base.get(v.name)
            if values is None:
                out[v.name] = np.zeros(0, dtype=int)
                continue
            codes = np.array([v.mapping.get(str(x), v.reference) for x in values], dtype=int)
            out[v.name] = codes
    return out


def _covariate_columns(batch: TrajectoryBatch, idx: np.ndarray, period: np.ndarray, state: np.ndarray,
                       last_pay: np.ndarray, last_k: np.ndarray, cum_p: np.ndarray) -> dict[str, np.ndarray]:
    has_pay = state[idx] > 0
    k = period[idx].astype(float)
    since = np.where(has_pay, k - last_k[idx], k)
    return {
        "deltRep": batch.delt_rep[idx],
        "fastRep": batch.fast_rep[idx],
        "inProcTime": k,
        "inStateTime": since,
        "delt1Pay": np.where(has_pay, last_pay[idx], np.nan),
        "delt1PayTime": np.where(has_pay, since, np.nan),
        "cumDelt1Pay": np.where(has_pay, cum_p[idx], np.nan),
    }


# -- engine --------------------------------------------------------------------

def run_trajectories(
    batch: TrajectoryBatch,
    models: ModelSet,
    config: ModelConfig,
    draw: UniformSource,
    trace: list | None = None,
) -> np.ndarray:
    """Final cumulative paid amount of every trajectory in ``batch``."""
    n = len(batch)
    state = batch.state.copy()
    period = batch.period.copy()
    cum = batch.cum_paid.copy()
    last_pay = batch.last_payment.copy()
    last_k = batch.last_payment_period.copy()
    cum_p = batch.cum_state_payments.copy()
    alive = np.ones(n, dtype=bool)
    n_time = len(models.time_models)
    n_pay = len(models.payment_models)
    time_base = [_encoded_base(m.encoder, batch.base) for m in models.time_models]
    pay_base = [_encoded_base(m.encoder, batch.base) for m in models.payment_models]
    payment_mode = config.payment_mode
    horizon = config.npmax * config.fixed_time_max + config.process_cap
    steps = 0
    while alive.any():
        steps += 1
        if steps > horizon + 1:
            raise RuntimeError("trajectory failed to terminate")  # forcing rules make this unreachable
        idx = np.flatnonzero(alive)
        cols = _covariate_columns(batch, idx, period, state, last_pay, last_k, cum_p)
        m_idx = np.minimum(state[idx], n_time - 1)
        haz = np.empty((len(idx), 4))
        for m in np.unique(m_idx):
            sel = m_idx == m
            sub = {k: v[sel] for k, v in cols.items()}
            for name, codes in time_base[m].items():
                sub[name] = codes[batch.group[idx[sel]]]
            haz[sel] = models.time_models[m].hazards(sub, int(sel.sum()))
        haz = apply_forcing(haz, state[idx], cols["inStateTime"], cols["inProcTime"], config)
        # every trajectory is at a distinct period, so one counter step per trajectory
        u = _per_period_uniforms(draw, idx, period[idx], LANE_TRANSITION)
        cdf = np.cumsum(haz, axis=1)
        cdf[:, -1] = 1.0
        outcome = np.minimum((u[:, None] >= cdf).sum(axis=1), 3)

        paying = (outcome == P) | (outcome == TP)
        pay = np.zeros(len(idx))
        if paying.any():
            p_idx = np.flatnonzero(paying)
            pm_idx = np.minimum(state[idx[p_idx]], n_pay - 1)
            for m in np.unique(pm_idx):
                sel = p_idx[pm_idx == m]
                model = models.payment_models[m]
                sub = {k: v[sel] for k, v in cols.items()}
                sub["terminal"] = (outcome[sel] == TP).astype(float)
                for name, codes in pay_base[m].items():
                    sub[name] = codes[batch.group[idx[sel]]]
                probs = model.bin_probs(sub, len(sel))
                if payment_mode == "sample":
                    ub = _per_period_uniforms(draw, idx[sel], period[idx[sel]], LANE_BIN)
                    uv = _per_period_uniforms(draw, idx[sel], period[idx[sel]], LANE_VALUE)
                    pay[sel] = payment_from_uniforms(model, probs, ub, uv)
                else:
                    pay[sel] = expected_payment(model, probs)

        if trace is not None:
            for j, t in enumerate(idx):
                trace.append({
                    "trajectory": int(t), "period": int(period[t]), "state": int(state[t]),
                    "covariates": {k: float(v[j]) for k, v in cols.items()},
                    "transition": int(outcome[j]), "payment": float(pay[j]) if paying[j] else None,
                })

        rows = idx[paying]
        cum[rows] += pay[paying]
        moved = idx[outcome == P]
        last_pay[moved] = pay[outcome == P]
        last_k[moved] = period[moved]
        cum_p[moved] += pay[outcome == P]
        state[moved] += 1
        alive[idx[(outcome == TN) | (outcome == TP)]] = False
        period[idx] += 1
    return cum


def _per_period_uniforms(draw: UniformSource, idx: np.ndarray, periods: np.ndarray, lane: int) -> np.ndarray:
    """Uniforms keyed by each trajectory's own period index."""
    out = np.empty(len(idx))
    for k in np.unique(periods):
        sel = periods == k
        out[sel] = draw(idx[sel], int(k), lane)
    return out


def simulate_rbns_trajectory(claim: ClaimState, models: ModelSet, config: ModelConfig,
                             rng: np.random.Generator, trace: list | None = None) -> float:
    """One total-cost draw for an open claim."""
    batch = batch_from_states([claim], 1, list(claim.base))
    return float(run_trajectories(batch, models, config, rng_source(rng), trace)[0])


# -- IBNR ----------------------------------------------------------------------

@dataclass
class IbnrSkeletons:
    """Unreported claims to simulate, flattened over replications."""

    reps: np.ndarray
    origin: np.ndarray  # accident year
    dev: np.ndarray  # development year of reporting
    index: np.ndarray  # running number within (rep, origin, dev)
    delt_rep: np.ndarray  # periods from accident to the first possible reporting period

    def __len__(self) -> int:
        return len(self.reps)

    def keys(self) -> np.ndarray:
        return np.array([policy_key(f"ibnr:{o}:{d}:{i}") for o, d, i in zip(self.origin, self.dev, self.index)],
                        dtype=np.uint64)


def initial_delay(origin: int, dev: int, as_of: dt.date, per_len: int) -> int:
    """Periods from mid accident year to the earliest reporting date consistent with the cell."""
    accident = dt.date(origin, 7, 1)
    earliest = max(as_of + dt.timedelta(days=1), dt.date(origin + dev, 1, 1))
    return max(1, math.ceil((earliest - accident).days / per_len))


def ibnr_skeletons(cells: np.ndarray, origins: Sequence[int], as_of: dt.date, per_len: int) -> IbnrSkeletons:
    """Skeleton claims from IBNR cell counts of shape ``(n_reps, I, J)``."""
    cells = np.asarray(cells, dtype=int)
    reps, origin, dev, index, delays = [], [], [], [], []
    delay_of = {}
    for r, i, j in zip(*np.nonzero(cells)):
        c = int(cells[r, i, j])
        key = (int(origins[i]), int(j))
        if key not in delay_of:
            delay_of[key] = initial_delay(key[0], key[1], as_of, per_len)
        reps += [r] * c
        origin += [key[0]] * c
        dev += [key[1]] * c
        index += list(range(c))
        delays += [delay_of[key]] * c
    return IbnrSkeletons(np.array(reps, dtype=int), np.array(origin, dtype=int), np.array(dev, dtype=int),
                         np.array(index, dtype=int), np.array(delays, dtype=float))


def simulate_reporting(keys: np.ndarray, reps: np.ndarray, probability: float, seed: int,
                       report_cap: int) -> tuple[np.ndarray, int]:
    """Periods until reporting (>= 1) for each skeleton and the number capped."""
    n = len(keys)
    waited = np.ones(n, dtype=int)
    pending = np.ones(n, dtype=bool)
    trial = 1
    while pending.any() and trial <= report_cap:
        idx = np.flatnonzero(pending)
        u = counter_uniforms(seed, keys[idx], reps[idx], trial, LANE_REPORT)
        reported = u < probability
        pending[idx[reported]] = False
        waited[idx[~reported]] += 1
        trial += 1
    capped = int(pending.sum())
    if capped:
        waited[pending] = report_cap
        log.warning("%d IBNR claims hit the reporting cap of %d periods", capped, report_cap)
    return waited, capped


def simulate_ibnr(skeletons: IbnrSkeletons, models: ModelSet, config: ModelConfig, seed: int,
                  base_levels: dict[str, str] | None = None) -> tuple[np.ndarray, int]:
    """Total cost of every skeleton claim (they have no payments at the evaluation date)."""
    n = len(skeletons)
    if n == 0:
        return np.zeros(0), 0
    keys = skeletons.keys()
    prob = models.reporting.probability if models.reporting is not None else 1.0
    waited, capped = simulate_reporting(keys, skeletons.reps, prob, seed, config.report_cap)
    base = {name: np.array([(base_levels or {}).get(name, "")], dtype=object) for name in models.base_names}
    batch = TrajectoryBatch(
        keys=keys, reps=skeletons.reps, state=np.zeros(n, dtype=int), period=np.ones(n, dtype=int),
        cum_paid=np.zeros(n), delt_rep=skeletons.delt_rep + waited - 1, fast_rep=np.zeros(n),
        last_payment=np.full(n, np.nan), last_payment_period=np.zeros(n, dtype=int),
        cum_state_payments=np.zeros(n), group=np.zeros(n, dtype=int), base=base,
    )
    return run_trajectories(batch, models, config, counter_source(seed, batch)), capped


# -- portfolio -----------------------------------------------------------------

@dataclass
class ReserveDistribution:
    """Reserve draws per open claim plus the IBNR total per replication (units)."""

    policy_ids: list[str]
    rbns: np.ndarray  # (n_claims, n_sims)
    ibnr: np.ndarray  # (n_sims,)
    ibnr_counts: np.ndarray  # (n_sims,)
    flags: dict[str, int] = field(default_factory=dict)

    @property
    def n_sims(self) -> int:
        return len(self.ibnr)

    @property
    def rbns_totals(self) -> np.ndarray:
        return self.rbns.sum(axis=0) if len(self.rbns) else np.zeros(self.n_sims)

    @property
    def totals(self) -> np.ndarray:
        return self.rbns_totals + self.ibnr

    def summary(self, probs: Sequence[float] = (0.05, 0.5, 0.95)) -> dict[str, float]:
        out = {}
        for name, x in (("rbns", self.rbns_totals), ("ibnr", self.ibnr), ("total", self.totals)):
            out[f"{name}_mean"] = float(x.mean()) if len(x) else 0.0
            for p in probs:
                out[f"{name}_q{p:g}"] = float(np.quantile(x, p)) if len(x) else 0.0
        return out

    def write_claim_quantiles(self, stream: TextIO, probs: Sequence[float] = (0.05, 0.5, 0.95)) -> None:
        stream.write("polNumb,mean," + ",".join(f"q{p:g}" for p in probs) + "\n")
        for pid, row in zip(self.policy_ids, self.rbns):
            q = np.quantile(row, probs)
            stream.write(f"{pid},{row.mean():.2f}," + ",".join(f"{v:.2f}" for v in q) + "\n")

    def write_histogram(self, stream: TextIO, bins: int = 30) -> None:
        counts, edges = np.histogram(self.totals, bins=bins)
        stream.write("lower,upper,count\n")
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            stream.write(f"{lo:.2f},{hi:.2f},{c}\n")

    def write_summary(self, stream: TextIO) -> None:
        stream.write("statistic,value\n")
        for k, v in self.summary().items():
            stream.write(f"{k},{v:.2f}\n")
        for k, v in sorted(self.flags.items()):
            stream.write(f"flag:{k},{v}\n")

    def write_draws(self, stream: TextIO) -> None:
        stream.write("replication,rbns,ibnr,ibnrCount,total\n")
        for r, (a, b, c, t) in enumerate(zip(self.rbns_totals, self.ibnr, self.ibnr_counts, self.totals)):
            stream.write(f"{r},{a:.2f},{b:.2f},{int(c)},{t:.2f}\n")


def _run_chunk(args) -> np.ndarray:
    batch, models, config, seed = args
    return run_trajectories(batch, models, config, counter_source(seed, batch))


def _chunks(n: int, size: int) -> list[slice]:
    return [slice(s, min(n, s + size)) for s in range(0, n, size)]


def ibnr_cells(model: IbnrCountModel, config: ModelConfig, n_sims: int, seed: int) -> np.ndarray:
    """IBNR cell counts per replication: fresh draws, or the rounded mean count per year."""
    if config.ibnr_mode != "mean":
        return sample_ibnr(model, n_sims, substream(seed, 2000)).cells
    per_year, _ = expected_ibnr(model)
    cells = np.zeros((len(model.r), len(model.pi)), dtype=int)
    for i, mean in enumerate(per_year):
        total = int(np.rint(mean))
        k = int(model.n_observed[i])
        if total == 0 or k >= len(model.pi):
            continue
        share = total * standardize_tail(model.pi, k)
        whole = np.floor(share).astype(int)
        # largest remainders take the counts lost to flooring
        order = np.argsort(-(share - whole), kind="stable")
        whole[order[:total - whole.sum()]] += 1
        cells[i, k:] = whole
    return np.broadcast_to(cells, (n_sims,) + cells.shape).copy()


def simulate_portfolio(
    claims: Sequence[ClaimState],
    models: ModelSet,
    config: ModelConfig,
    as_of: dt.date | None = None,
    n_sims: int | None = None,
    seed: int | None = None,
    workers: int = 1,
    cum_at_eval: Sequence[float] | None = None,
    chunk_size: int = 200_000,
    base_levels: dict[str, str] | None = None,
) -> ReserveDistribution:
    """Reserve distribution of the open claims plus the IBNR claims of ``models.ibnr``.

    ``cum_at_eval`` holds the amount booked by the evaluation date per claim
    (defaults to each claim's ``cum_paid``); reserves are final cost minus it.
    """
    n_sims = n_sims or config.n_sims
    seed = config.rng_seed if seed is None else seed
    batch = batch_from_states(claims, n_sims, models.base_names)
    slices = _chunks(len(batch), max(1, chunk_size))
    jobs = [(batch.take(s), models, config, seed) for s in slices]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, jobs))
    else:
        parts = [_run_chunk(job) for job in jobs]
    final = np.concatenate(parts) if parts else np.zeros(0)
    base_cum = np.asarray(cum_at_eval if cum_at_eval is not None else [c.cum_paid for c in claims], dtype=float)
    rbns = final.reshape(len(claims), n_sims) - base_cum[:, None] if len(claims) else np.zeros((0, n_sims))

    flags: dict[str, int] = {}
    ibnr = np.zeros(n_sims)
    counts = np.zeros(n_sims, dtype=int)
    if models.ibnr is not None:
        if as_of is None:
            raise ValueError("IBNR simulation needs the evaluation date")
        cells = ibnr_cells(models.ibnr, config, n_sims, seed)
        skeletons = ibnr_skeletons(cells, models.ibnr.origins, as_of, config.per_len)
        cost, capped = simulate_ibnr(skeletons, models, config, seed, base_levels)
        ibnr = np.bincount(skeletons.reps, weights=cost, minlength=n_sims) if len(cost) else ibnr
        counts = cells.sum(axis=(1, 2))
        if capped:
            flags["reporting_capped"] = capped
    return ReserveDistribution([c.policy_id for c in claims], rbns, ibnr, counts, flags)
