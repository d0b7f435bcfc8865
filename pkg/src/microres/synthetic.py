"""Synthetic portfolios with a known multi-state truth.

Claims occur uniformly over an accident window, are reported after a
geometric number of periods (or on the accident day with a given share),
then move through the states with per-state outcome probabilities, optionally
shifted by a binary ``segment`` covariate.  Payments come from spliced laws
of the same family as :class:`SplicedPaymentModel`.  The generator also writes
the true reserve of every claim at an evaluation date.

Payments on P transitions are redrawn until they exceed ``minPayVal`` in
absolute value so that a generated history discretizes back to exactly the
same state sequence.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence, TextIO

import numpy as np
import yaml

from .claims_data import TN, TP, TRANSITIONS, P, Claim, ClaimTransaction, format_money
from .config import ModelConfig
from .payment_model import GpdFit, SplicedPaymentModel, TruncNormFit, payment_from_uniforms, weights_from_probs
from .rng import substream
from .time_model import apply_forcing


class SpecError(ValueError):
    pass


@dataclass
class PaymentLaw:
    """True spliced payment law of one state (units)."""

    splits: list[float]
    left: tuple[float, float]  # GPD (scale, shape) of b1 - Y
    right: tuple[float, float]  # GPD (scale, shape) of Y - b_last
    body: list[tuple[float, float]]  # (mu, sigma) per body bin
    weights: list[float]
    segment_effect: list[float] = field(default_factory=list)  # log-odds shift per bin vs bin 1

    def model(self, index: int = 0) -> SplicedPaymentModel:
        b = np.asarray(self.splits, dtype=float)
        body = [TruncNormFit(lo, hi, mu, sd, 0, float("nan")) for (lo, hi), (mu, sd) in
                zip(zip(b[:-1], b[1:]), self.body)]
        return SplicedPaymentModel(index, b, GpdFit(*self.left, 0, float("nan")),
                                   GpdFit(*self.right, 0, float("nan")), body, weights_from_probs(self.weights))

    def probs(self, segment: np.ndarray) -> np.ndarray:
        """Bin probabilities per claim given segment indicators (0/1)."""
        w = np.asarray(self.weights, dtype=float)
        effect = np.asarray(self.segment_effect or [0.0] * len(w), dtype=float)
        with np.errstate(divide="ignore"):
            logit = np.log(w)[None, :] + np.asarray(segment, dtype=float)[:, None] * effect[None, :]
        e = np.exp(logit - np.max(logit, axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)


@dataclass
class SyntheticSpec:
    n_claims: int
    accident_start: dt.date
    accident_end: dt.date
    report_probability: float  # per period
    fast_share: float  # share reported on the accident day
    hazards: list[list[float]]  # per model index, (N, P, TN, TP)
    payments: list[PaymentLaw]
    segment_share: float = 0.5
    hazard_segment_effect: list[list[float]] = field(default_factory=list)  # per state, shift of (P, TN, TP)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.n_claims < 0:
            raise SpecError("n_claims must be nonnegative")
        if self.accident_end < self.accident_start:
            raise SpecError("accident window is empty")
        if not 0 < self.report_probability <= 1:
            raise SpecError("report_probability must be in (0, 1]")
        if not 0 <= self.fast_share <= 1 or not 0 <= self.segment_share <= 1:
            raise SpecError("shares must be in [0, 1]")
        if not self.hazards or len(self.hazards) != len(self.payments):
            raise SpecError("need one hazard vector and one payment law per state")
        for h in self.hazards:
            h = np.asarray(h, dtype=float)
            if h.shape != (4,) or np.any(h < 0) or abs(h.sum() - 1) > 1e-9:
                raise SpecError(f"hazard vector {h.tolist()} is not a probability vector")
        if sum(h[TN] + h[TP] for h in self.hazards) == 0:
            raise SpecError("no state has a terminal outcome; trajectories would not terminate")
        for law in self.payments:
            b = np.asarray(law.splits, dtype=float)
            if np.any(np.diff(b) <= 0):
                raise SpecError("split points must increase")
            if len(law.body) != len(b) - 1 or len(law.weights) != len(b) + 1:
                raise SpecError("payment law sizes do not match its split points")
            w = np.asarray(law.weights, dtype=float)
            if np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
                raise SpecError("payment weights must be a probability vector")

    @property
    def n_states(self) -> int:
        return len(self.hazards)

    def state_probs(self, state: np.ndarray, segment: np.ndarray) -> np.ndarray:
        m = np.minimum(state, self.n_states - 1)
        base = np.asarray(self.hazards, dtype=float)[m]
        if not self.hazard_segment_effect:
            return base
        eff = np.zeros((len(m), 4))
        eff[:, 1:] = np.asarray(self.hazard_segment_effect, dtype=float)[m] * segment[:, None]
        with np.errstate(divide="ignore"):
            logit = np.log(base) + eff
        e = np.exp(logit - logit.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def to_mapping(self) -> dict[str, Any]:
        return {
            "n_claims": self.n_claims,
            "accident_start": self.accident_start.isoformat(),
            "accident_end": self.accident_end.isoformat(),
            "report_probability": self.report_probability,
            "fast_share": self.fast_share,
            "segment_share": self.segment_share,
            "hazards": [list(map(float, h)) for h in self.hazards],
            "hazard_segment_effect": [list(map(float, h)) for h in self.hazard_segment_effect],
            "payments": [{
                "splits": list(map(float, p.splits)), "left": list(p.left), "right": list(p.right),
                "body": [list(b) for b in p.body], "weights": list(map(float, p.weights)),
                "segment_effect": list(map(float, p.segment_effect)),
            } for p in self.payments],
        }

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "SyntheticSpec":
        def date(v):
            return v if isinstance(v, dt.date) else dt.date.fromisoformat(str(v))
        try:
            payments = [PaymentLaw(list(p["splits"]), tuple(p["left"]), tuple(p["right"]),
                                   [tuple(b) for b in p["body"]], list(p["weights"]),
                                   list(p.get("segment_effect", []))) for p in data["payments"]]
            return cls(int(data["n_claims"]), date(data["accident_start"]), date(data["accident_end"]),
                       float(data["report_probability"]), float(data.get("fast_share", 0.0)),
                       [list(h) for h in data["hazards"]], payments, float(data.get("segment_share", 0.5)),
                       [list(h) for h in data.get("hazard_segment_effect", [])])
        except (KeyError, TypeError) as err:
            raise SpecError(f"bad synthetic spec: {err}") from None


def load_spec(path) -> SyntheticSpec:
    with open(path) as fh:
        return SyntheticSpec.from_mapping(yaml.safe_load(fh) or {})


def default_spec(n_claims: int = 10_000) -> SyntheticSpec:
    """Four-state toy portfolio with mixed outcome probabilities (units of currency)."""
    law = PaymentLaw([-1230.0, 0.0, 3500.0], (800.0, 0.2), (4000.0, 0.3), [(-475.0, 400.0), (1400.0, 900.0)],
                     [0.05, 0.05, 0.65, 0.25], [0.0, 0.0, 0.0, 0.5])
    return SyntheticSpec(
        n_claims, dt.date(2008, 1, 1), dt.date(2012, 12, 31), 0.8, 0.3,
        [[0.62, 0.35, 0.0, 0.03], [0.55, 0.2, 0.15, 0.10], [0.5, 0.15, 0.2, 0.15], [0.45, 0.1, 0.25, 0.2]],
        [law] * 4,
    )


@dataclass
class ClaimHistory:
    """Generated claim with its outcome per period (units)."""

    policy_id: str
    acc_date: dt.date
    rep_date: dt.date
    closed_date: dt.date
    segment: str
    events: list[tuple[int, str, float]]  # (period, transition, payment) for every non-N period
    transactions: list[ClaimTransaction]

    def claim(self) -> Claim:
        return Claim.from_transactions(self.transactions)

    def true_reserve(self, as_of: dt.date) -> float:
        """Payments booked after ``as_of`` (units)."""
        before = 0
        final = 0
        for t in self.transactions:
            if t.book_date <= as_of:
                before = t.cum_pay
            final = t.cum_pay
        return (final - before) / 100

    def status(self, as_of: dt.date) -> str:
        if self.acc_date > as_of:
            return "future"
        if self.rep_date > as_of:
            return "ibnr"
        if self.closed_date <= as_of:
            return "closed"
        return "rbns"


@dataclass
class Portfolio:
    spec: SyntheticSpec
    config: ModelConfig
    histories: list[ClaimHistory]

    def claims(self, as_of: dt.date | None = None) -> list[Claim]:
        """Claims as they would appear in a log extracted on ``as_of``."""
        out = []
        for h in self.histories:
            if as_of is not None and h.rep_date > as_of:
                continue
            out.append(h.claim())
        return out

    def write_transactions(self, stream: TextIO) -> None:
        fmt = self.config.date_format
        d = self.config.delimiter
        stream.write(d.join(["PolNumb", "cumPay", "bookDate", "accDate", "repDate", "Status", "closedDate",
                             "segment"]) + "\n")
        for h in self.histories:
            for t in h.transactions:
                stream.write(d.join([
                    t.policy_id, format_money(t.cum_pay), t.book_date.strftime(fmt), t.acc_date.strftime(fmt),
                    t.rep_date.strftime(fmt), t.status, t.closed_date.strftime(fmt) if t.closed_date else "",
                    h.segment,
                ]) + "\n")

    def write_truth(self, stream: TextIO, as_of: dt.date) -> None:
        stream.write("polNumb,status,reserve,finalCum\n")
        for h in self.histories:
            status = h.status(as_of)
            if status == "future":
                continue
            stream.write(f"{h.policy_id},{status},{h.true_reserve(as_of):.2f},"
                         f"{format_money(h.transactions[-1].cum_pay)}\n")

    def true_reserves(self, as_of: dt.date) -> dict[str, float]:
        return {h.policy_id: h.true_reserve(as_of) for h in self.histories if h.status(as_of) in ("rbns", "ibnr")}


def _draw_payments(law: PaymentLaw, segment: np.ndarray, must_exceed: np.ndarray, threshold: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Payments in cents; rows flagged ``must_exceed`` are redrawn until |y| > threshold."""
    model = law.model()
    probs = law.probs(segment)
    n = len(segment)
    cents = np.zeros(n, dtype=np.int64)
    todo = np.arange(n)
    for _ in range(1000):
        if len(todo) == 0:
            break
        y = payment_from_uniforms(model, probs[todo], rng.random(len(todo)), rng.random(len(todo)))
        c = np.rint(y * 100).astype(np.int64)
        bad = np.where(must_exceed[todo], np.abs(c) <= threshold, c == 0)
        cents[todo[~bad]] = c[~bad]
        todo = todo[bad]
    if len(todo):
        raise SpecError("payment law puts almost no mass above the payment threshold")
    return cents


def generate_portfolio(spec: SyntheticSpec, config: ModelConfig, seed: int = 0,
                       id_prefix: str = "S") -> Portfolio:
    """Complete claim histories drawn from ``spec``."""
    rng = substream(seed, 3000)
    n = spec.n_claims
    L = config.per_len
    start = spec.accident_start.toordinal()
    span = spec.accident_end.toordinal() - start + 1
    acc = start + rng.integers(0, span, size=n)
    fast = rng.random(n) < spec.fast_share
    delay_periods = rng.geometric(spec.report_probability, size=n)
    # delay in days d gives deltRep = ceil(d / L) = delay_periods
    delay_days = np.where(fast, 0, (delay_periods - 1) * L + rng.integers(1, L + 1, size=n))
    rep = acc + delay_days
    segment = (rng.random(n) < spec.segment_share).astype(int)

    state = np.zeros(n, dtype=int)
    in_state = np.ones(n, dtype=int)
    alive = np.ones(n, dtype=bool)
    events: list[list[tuple[int, str, int]]] = [[] for _ in range(n)]
    k = 1
    threshold = config.min_pay_cents
    while alive.any():
        idx = np.flatnonzero(alive)
        h = spec.state_probs(state[idx], segment[idx])
        h = apply_forcing(h, state[idx], in_state[idx], np.full(len(idx), k), config)
        cdf = np.cumsum(h, axis=1)
        cdf[:, -1] = 1.0
        outcome = np.minimum((rng.random(len(idx))[:, None] >= cdf).sum(axis=1), 3)
        pay = np.zeros(len(idx), dtype=np.int64)
        paying = (outcome == P) | (outcome == TP)
        m_idx = np.minimum(state[idx], spec.n_states - 1)
        for m in np.unique(m_idx[paying]):
            sel = np.flatnonzero(paying & (m_idx == m))
            pay[sel] = _draw_payments(spec.payments[m], segment[idx[sel]], outcome[sel] == P, threshold, rng)
        for j, c in enumerate(idx):
            o = int(outcome[j])
            if o != 0:
                events[c].append((k, TRANSITIONS[o], int(pay[j])))
        moved = outcome == P
        state[idx[moved]] += 1
        in_state[idx[moved]] = 1
        in_state[idx[~moved]] += 1
        alive[idx[(outcome == TN) | (outcome == TP)]] = False
        k += 1

    histories = []
    width = len(str(max(n, 1)))
    for c in range(n):
        pid = f"{id_prefix}{c:0{width}d}"
        histories.append(_build_history(pid, int(acc[c]), int(rep[c]), "AB"[segment[c]], events[c], L, rng))
    return Portfolio(spec, config, histories)


def _build_history(pid: str, acc: int, rep: int, segment: str, events, L: int,
                   rng: np.random.Generator) -> ClaimHistory:
    """Transactions realising the period outcomes of one claim."""
    acc_d, rep_d = dt.date.fromordinal(acc), dt.date.fromordinal(rep)
    k_end, last, last_pay = events[-1]
    period_start = rep + (k_end - 1) * L
    closed = period_start + int(rng.integers(0, L))
    closed_d = dt.date.fromordinal(closed)
    static = {"segment": segment}
    txns = [ClaimTransaction(pid, 0, rep_d, acc_d, rep_d, "O", closed_d, static)]
    cum = 0
    out_events = []
    for k, transition, cents in events:
        out_events.append((k, transition, cents / 100 if transition in ("P", "TP") else 0.0))
        if transition == "P":
            cum += cents
            day = rep + (k - 1) * L + int(rng.integers(0, L))
            txns.append(ClaimTransaction(pid, cum, dt.date.fromordinal(day), acc_d, rep_d, "O", closed_d, static))
        elif transition == "TP":
            cum += cents
            day = rep + (k - 1) * L + int(rng.integers(0, closed - period_start + 1))
            txns.append(ClaimTransaction(pid, cum, dt.date.fromordinal(day), acc_d, rep_d, "O", closed_d, static))
    txns.append(ClaimTransaction(pid, cum, closed_d, acc_d, rep_d, "C", closed_d, static))
    for i, t in enumerate(txns):
        object.__setattr__(t, "line", i)
    return ClaimHistory(pid, acc_d, rep_d, closed_d, segment, out_events, txns)


def write_spec(spec: SyntheticSpec, stream: TextIO) -> None:
    yaml.safe_dump(spec.to_mapping(), stream, sort_keys=False)
