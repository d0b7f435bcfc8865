"""Claim transaction logs, discretisation into periods and covariates.

Money is held as integer cents throughout this module.  A claim's period grid
starts at its reporting date: period ``k`` covers the days
``[rep + (k-1)*perLen, rep + k*perLen)``.  The cumulative payment is read at
the last booking inside each period; a change of more than ``minPayVal``
against the last recorded value is a payment transition (P).  The period
holding the closure date ends with TP if the cumulative amount changed since
the last record, otherwise with TN.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import logging
import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal, InvalidOperation
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

from .config import ModelConfig
from .ibnr_counts import RunoffTriangle

log = logging.getLogger(__name__)

TRANSITIONS = ("N", "P", "TN", "TP")
N, P, TN, TP = range(4)

# accepted header spellings (lower-cased) -> field
_HEADER = {
    "polnumb": "policy_id", "policy_id": "policy_id", "policy": "policy_id", "polnumber": "policy_id",
    "cumpay": "cum_pay", "cum_pay": "cum_pay",
    "bookdate": "book_date", "book_date": "book_date",
    "accdate": "acc_date", "acc_date": "acc_date",
    "repdate": "rep_date", "rep_date": "rep_date",
    "status": "status",
    "closeddate": "closed_date", "closed_date": "closed_date",
}
_REQUIRED = ("policy_id", "cum_pay", "book_date", "acc_date", "rep_date")


class TransactionParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ClaimAnomaly(ValueError):
    """A claim whose dates are inconsistent (quarantined, not modelled)."""


@dataclass(frozen=True)
class ClaimTransaction:
    policy_id: str
    cum_pay: int  # cents
    book_date: dt.date
    acc_date: dt.date
    rep_date: dt.date
    status: str = "O"
    closed_date: dt.date | None = None
    static_covariates: Mapping[str, str] = field(default_factory=dict)
    line: int = 0


@dataclass
class Claim:
    policy_id: str
    acc_date: dt.date
    rep_date: dt.date
    closed_date: dt.date | None
    transactions: list[ClaimTransaction]
    static: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_transactions(cls, txns: Sequence[ClaimTransaction]) -> "Claim":
        if not txns:
            raise ValueError("a claim needs at least one transaction")
        txns = sorted(txns, key=lambda t: (t.book_date, t.line))
        last = txns[-1]
        closed = None
        if any(t.status == "C" for t in txns):
            closed = next((t.closed_date for t in reversed(txns) if t.closed_date), None)
            if closed is None:
                closed = next(t.book_date for t in txns if t.status == "C")
        elif any(t.closed_date for t in txns):
            closed = next(t.closed_date for t in reversed(txns) if t.closed_date)
        return cls(last.policy_id, last.acc_date, last.rep_date, closed, list(txns),
                   dict(last.static_covariates))

    def cum_at(self, day: dt.date) -> int:
        """Cumulative payment (cents) booked on or before ``day``."""
        value = 0
        for t in self.transactions:
            if t.book_date > day:
                break
            value = t.cum_pay
        return value

    def final_cum(self) -> int:
        return self.transactions[-1].cum_pay if self.transactions else 0


@dataclass
class Anomaly:
    policy_id: str
    reason: str


@dataclass
class ParseResult:
    claims: list[Claim]
    anomalies: list[Anomaly] = field(default_factory=list)

    def __iter__(self):
        return iter(self.claims)

    def __len__(self) -> int:
        return len(self.claims)


@dataclass
class CovariateVector:
    delt_rep: int
    fast_rep: int
    in_proc_time: int
    delt1_pay: int | None  # cents
    delt1_pay_time: int | None
    cum_delt1_pay: int | None  # cents
    in_state_time: int
    base: dict[str, str] = field(default_factory=dict)
    terminal_payment_flag: int = 0

    def as_dict(self) -> dict:
        """Named values with money in currency units."""
        out = {
            "deltRep": self.delt_rep,
            "fastRep": self.fast_rep,
            "inProcTime": self.in_proc_time,
            "delt1Pay": np.nan if self.delt1_pay is None else self.delt1_pay / 100,
            "delt1PayTime": np.nan if self.delt1_pay_time is None else self.delt1_pay_time,
            "cumDelt1Pay": np.nan if self.cum_delt1_pay is None else self.cum_delt1_pay / 100,
            "inStateTime": self.in_state_time,
            "terminal": self.terminal_payment_flag,
        }
        out.update(self.base)
        return out


@dataclass
class PeriodRow:
    policy_id: str
    state_index: int
    period_index: int
    covariates: CovariateVector
    transition: str
    payment: int | None  # cents, present iff transition in {P, TP}
    cum_pay: int  # cents read at period end
    book_date: dt.date
    acc_date: dt.date
    rep_date: dt.date
    closed_date: dt.date | None


def parse_money(text: str) -> int:
    """Currency text such as ``4,087.61`` or ``-3829.99`` to integer cents."""
    cleaned = text.strip().replace(",", "").replace(" ", "")
    if not cleaned:
        raise ValueError("empty amount")
    try:
        value = Decimal(cleaned)
    except InvalidOperation:
        raise ValueError(f"not a number: {text!r}") from None
    if not value.is_finite():
        raise ValueError(f"not a finite amount: {text!r}")
    return int((value * 100).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def format_money(cents: int | None) -> str:
    if cents is None:
        return "NA"
    sign = "-" if cents < 0 else ""
    whole, frac = divmod(abs(int(cents)), 100)
    return f"{sign}{whole}.{frac:02d}"


def _parse_date(text: str, fmt: str) -> dt.date:
    return dt.datetime.strptime(text.strip(), fmt).date()


def parse_transactions(source: TextIO | str, config: ModelConfig | None = None) -> ParseResult:
    """Read a delimited transaction log into claims grouped by policy.

    Malformed dates or amounts raise :class:`TransactionParseError` naming the
    line.  Claims with inconsistent dates go to ``anomalies``.
    """
    config = config or ModelConfig()
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.reader(source, delimiter=config.delimiter)
    header = next(reader, None)
    if header is None:
        return ParseResult([])
    names = [h.strip() for h in header]
    mapped = [_HEADER.get(h.lower()) for h in names]
    missing = [r for r in _REQUIRED if r not in mapped]
    if missing:
        raise TransactionParseError(1, f"missing columns: {', '.join(missing)}")
    extra = [(i, names[i]) for i, m in enumerate(mapped) if m is None]

    grouped: dict[str, list[ClaimTransaction]] = {}
    for line, record in enumerate(reader, start=2):
        if not record or all(not c.strip() for c in record):
            continue
        if len(record) < len(names):
            raise TransactionParseError(line, f"expected {len(names)} fields, got {len(record)}")
        values = {m: record[i] for i, m in enumerate(mapped) if m is not None}
        try:
            cum = parse_money(values["cum_pay"])
        except ValueError as err:
            raise TransactionParseError(line, f"bad cumPay: {err}") from None
        dates = {}
        for key in ("book_date", "acc_date", "rep_date", "closed_date"):
            raw = values.get(key, "").strip()
            if key == "closed_date" and raw in ("", "NA"):
                dates[key] = None
                continue
            try:
                dates[key] = _parse_date(raw, config.date_format)
            except ValueError:
                raise TransactionParseError(line, f"bad {key}: {raw!r}") from None
        status = values.get("status", "O").strip().upper()[:1] or "O"
        if status not in ("O", "C"):
            raise TransactionParseError(line, f"bad status: {values.get('status')!r}")
        txn = ClaimTransaction(
            policy_id=values["policy_id"].strip(),
            cum_pay=cum,
            status=status,
            static_covariates={name: record[i].strip() for i, name in extra},
            line=line,
            **dates,
        )
        grouped.setdefault(txn.policy_id, []).append(txn)

    claims: list[Claim] = []
    anomalies: list[Anomaly] = []
    for pid, txns in grouped.items():
        claim = Claim.from_transactions(txns)
        reason = claim_anomaly(claim)
        if reason:
            anomalies.append(Anomaly(pid, reason))
        else:
            claims.append(claim)
    return ParseResult(claims, anomalies)


def claim_anomaly(claim: Claim) -> str | None:
    if any(t.acc_date != claim.acc_date or t.rep_date != claim.rep_date for t in claim.transactions):
        return "accident or reporting date changes between transactions"
    if claim.rep_date < claim.acc_date:
        return "reported before the accident date"
    if claim.closed_date is not None and claim.closed_date < claim.rep_date:
        return "closed before the reporting date"
    return None


def engineer_features(
    acc_date: dt.date,
    rep_date: dt.date,
    payments: Sequence[tuple[int, int]],
    period: int,
    per_len: int,
    base: Mapping[str, str] | None = None,
    terminal: bool = False,
) -> CovariateVector:
    """Covariates at the start of ``period`` (1-based).

    ``payments`` lists ``(period_index, cents)`` of recorded payment
    transitions; only those in earlier periods are used.
    """
    past = [(k, c) for k, c in payments if k < period]
    delay_days = (rep_date - acc_date).days
    delt_rep = max(1, math.ceil(delay_days / per_len))
    fast_rep = int(delay_days == 0)
    if past:
        last_k, last_c = past[-1]
        since = period - last_k
        return CovariateVector(delt_rep, fast_rep, period, last_c, since,
                               sum(c for _, c in past), since, dict(base or {}), int(terminal))
    return CovariateVector(delt_rep, fast_rep, period, None, None, None, period,
                           dict(base or {}), int(terminal))


def _as_claim(claim: Claim | Sequence[ClaimTransaction]) -> Claim:
    return claim if isinstance(claim, Claim) else Claim.from_transactions(list(claim))


def discretize_claim(
    claim: Claim | Sequence[ClaimTransaction],
    config: ModelConfig | None = None,
    as_of: dt.date | None = None,
) -> list[PeriodRow]:
    """Per-period multi-state rows of one claim, censored at ``as_of``.

    Only periods that are complete by ``as_of`` produce rows; a closure after
    ``as_of`` is unknown and the claim is treated as open.  Without ``as_of``
    an open claim is censored at its last booking.
    """
    config = config or ModelConfig()
    claim = _as_claim(claim)
    reason = claim_anomaly(claim)
    if reason:
        raise ClaimAnomaly(f"{claim.policy_id}: {reason}")
    L = config.per_len
    threshold = config.min_pay_cents
    rep = claim.rep_date.toordinal()
    tau = as_of.toordinal() if as_of is not None else None
    if tau is not None and rep > tau:
        return []
    closed = claim.closed_date.toordinal() if claim.closed_date is not None else None
    if closed is not None and tau is not None and closed > tau:
        closed = None
    limit = closed if closed is not None else tau
    bookings = [(t.book_date.toordinal(), t.cum_pay) for t in claim.transactions
                if limit is None or t.book_date.toordinal() <= limit]
    if closed is not None:
        n_periods = (closed - rep) // L + 1
    else:
        end = tau if tau is not None else max([rep] + [d for d, _ in bookings])
        n_periods = (end - rep + 1) // L

    rows: list[PeriodRow] = []
    payments: list[tuple[int, int]] = []
    recorded = 0
    cum = 0
    b = 0
    prev_book: int | None = None
    for k in range(1, n_periods + 1):
        period_end = rep + k * L  # exclusive
        last_booking = None
        while b < len(bookings) and bookings[b][0] < period_end:
            last_booking, cum = bookings[b]
            b += 1
        change = cum - recorded
        closing = closed is not None and k == n_periods
        covs = engineer_features(claim.acc_date, claim.rep_date, payments, k, L, claim.static)
        state = len(payments)
        if closing:
            transition = "TP" if change != 0 else "TN"
        elif abs(change) > threshold:
            transition = "P"
        else:
            transition = "N"
        payment = change if transition in ("P", "TP") else None
        if payment is not None:
            covs.terminal_payment_flag = int(transition == "TP")
            recorded = cum
        if transition == "P":
            payments.append((k, change))
        if last_booking is not None:
            book = last_booking
        elif closing:
            book = closed
        elif prev_book is not None:
            book = prev_book + L
        else:
            book = rep + L - 1
        prev_book = book
        rows.append(PeriodRow(
            policy_id=claim.policy_id,
            state_index=state,
            period_index=k,
            covariates=covs,
            transition=transition,
            payment=payment,
            cum_pay=cum,
            book_date=dt.date.fromordinal(book),
            acc_date=claim.acc_date,
            rep_date=claim.rep_date,
            closed_date=claim.closed_date,
        ))
    return rows


TABLE_COLUMNS = (
    "polNumb", "cumPay", "bookDate", "accDate", "repDate", "transType", "closedDate",
    "deltRep", "fastRep", "procTime", "deltPay", "cumDeltPay", "stateTime", "state",
    "deltPayTime", "payment",
)


def write_period_rows(rows: Iterable[PeriodRow], stream: TextIO, config: ModelConfig | None = None) -> None:
    """Write rows as delimited text with the period-table column names."""
    config = config or ModelConfig()
    fmt = config.date_format
    writer = csv.writer(stream, delimiter=config.delimiter, lineterminator="\n")
    rows = list(rows)
    base_names = sorted({k for r in rows for k in r.covariates.base})
    writer.writerow(list(TABLE_COLUMNS) + base_names)
    for r in rows:
        c = r.covariates
        writer.writerow([
            r.policy_id, format_money(r.cum_pay), r.book_date.strftime(fmt), r.acc_date.strftime(fmt),
            r.rep_date.strftime(fmt), r.transition,
            r.closed_date.strftime(fmt) if r.closed_date else "NA",
            c.delt_rep, c.fast_rep, c.in_proc_time, format_money(c.delt1_pay),
            format_money(c.cum_delt1_pay), c.in_state_time, f"S{r.state_index}",
            "NA" if c.delt1_pay_time is None else c.delt1_pay_time, format_money(r.payment),
        ] + [c.base.get(k, "") for k in base_names])


# -- columnar period table ---------------------------------------------------

NUMERIC_COLUMNS = ("deltRep", "fastRep", "inProcTime", "inStateTime", "delt1Pay", "delt1PayTime", "cumDelt1Pay")


@dataclass
class PeriodTable:
    """Column store of period rows; money in currency units, NaN when absent."""

    policy_id: np.ndarray
    state: np.ndarray
    transition: np.ndarray
    payment: np.ndarray
    columns: dict[str, np.ndarray]
    base_names: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.state)

    @classmethod
    def from_rows(cls, rows: Sequence[PeriodRow], base_names: Sequence[str] | None = None) -> "PeriodTable":
        if base_names is None:
            base_names = sorted({k for r in rows for k in r.covariates.base})
        n = len(rows)
        cols: dict[str, np.ndarray] = {
            "deltRep": np.fromiter((r.covariates.delt_rep for r in rows), float, n),
            "fastRep": np.fromiter((r.covariates.fast_rep for r in rows), float, n),
            "inProcTime": np.fromiter((r.covariates.in_proc_time for r in rows), float, n),
            "inStateTime": np.fromiter((r.covariates.in_state_time for r in rows), float, n),
            "delt1Pay": np.fromiter((np.nan if r.covariates.delt1_pay is None else r.covariates.delt1_pay / 100
                                     for r in rows), float, n),
            "delt1PayTime": np.fromiter((np.nan if r.covariates.delt1_pay_time is None
                                         else r.covariates.delt1_pay_time for r in rows), float, n),
            "cumDelt1Pay": np.fromiter((np.nan if r.covariates.cum_delt1_pay is None
                                        else r.covariates.cum_delt1_pay / 100 for r in rows), float, n),
        }
        for name in base_names:
            cols[name] = np.array([r.covariates.base.get(name, "") for r in rows], dtype=object)
        transition = np.array([TRANSITIONS.index(r.transition) for r in rows], dtype=int)
        cols["terminal"] = (transition == TP).astype(float)
        return cls(
            policy_id=np.array([r.policy_id for r in rows], dtype=object),
            state=np.fromiter((r.state_index for r in rows), int, n),
            transition=transition,
            payment=np.fromiter((np.nan if r.payment is None else r.payment / 100 for r in rows), float, n),
            columns=cols,
            base_names=list(base_names),
        )

    def subset(self, mask) -> "PeriodTable":
        return PeriodTable(
            self.policy_id[mask], self.state[mask], self.transition[mask], self.payment[mask],
            {k: v[mask] for k, v in self.columns.items()}, list(self.base_names),
        )


def discretize_portfolio(
    claims: Iterable[Claim], config: ModelConfig, as_of: dt.date | None = None
) -> tuple[PeriodTable, list[Anomaly]]:
    rows: list[PeriodRow] = []
    anomalies: list[Anomaly] = []
    base_names: set[str] = set()
    for claim in sorted(claims, key=lambda c: c.policy_id):
        try:
            rows.extend(discretize_claim(claim, config, as_of))
        except ClaimAnomaly as err:
            anomalies.append(Anomaly(claim.policy_id, str(err)))
        base_names.update(claim.static)
    return PeriodTable.from_rows(rows, sorted(base_names)), anomalies


@dataclass
class StateDataset:
    model_index: int
    table: PeriodTable
    pooled_states: tuple[int, int | None]  # inclusive range of raw states

    @property
    def n_rows(self) -> int:
        return len(self.table)

    def payments(self) -> PeriodTable:
        return self.table.subset((self.table.transition == P) | (self.table.transition == TP))


def model_index(state, config: ModelConfig):
    return np.minimum(state, config.pooled_state)


def build_state_datasets(table: PeriodTable, config: ModelConfig) -> list[StateDataset]:
    """One training set per model; states at or above ``maxMod - 1`` are pooled."""
    idx = model_index(table.state, config)
    out = []
    for m in range(config.max_mod):
        upper = None if m == config.pooled_state else m
        out.append(StateDataset(m, table.subset(idx == m), (m, upper)))
    return out


# -- open claims at the evaluation date ---------------------------------------

@dataclass
class OpenClaim:
    """State of a reported, unsettled claim at the evaluation date."""

    policy_id: str
    state: int
    next_period: int
    recorded_cum: int  # cents at the last recorded transition
    cum_at_eval: int  # cents booked on or before the evaluation date
    payments: list[tuple[int, int]]
    delt_rep: int
    fast_rep: int
    base: dict[str, str]


def open_claim_at(claim: Claim, config: ModelConfig, as_of: dt.date) -> OpenClaim | None:
    """Starting point for simulating ``claim``; None if closed or not yet reported."""
    if claim.rep_date > as_of:
        return None
    if claim.closed_date is not None and claim.closed_date <= as_of:
        return None
    rows = discretize_claim(claim, config, as_of)
    payments = [(r.period_index, r.payment) for r in rows if r.transition == "P"]
    recorded = sum(c for _, c in payments)
    paid = claim.cum_at(as_of)
    next_period = len(rows) + 1
    # a payment above the threshold inside the unfinished period is taken as that period's P
    if abs(paid - recorded) > config.min_pay_cents:
        payments.append((next_period, paid - recorded))
        recorded = paid
        next_period += 1
    covs = engineer_features(claim.acc_date, claim.rep_date, [], 1, config.per_len, claim.static)
    return OpenClaim(claim.policy_id, len(payments), next_period, recorded, paid,
                     payments, covs.delt_rep, covs.fast_rep, dict(claim.static))


def build_triangle(
    claims: Iterable[Claim],
    as_of: dt.date,
    first_year: int | None = None,
    n_dev: int | None = None,
) -> RunoffTriangle:
    """Yearly accident x reporting-delay count triangle of claims reported by ``as_of``."""
    claims = [c for c in claims if c.acc_date <= as_of]
    if first_year is None:
        first_year = min((c.acc_date.year for c in claims), default=as_of.year)
    n_acc = as_of.year - first_year + 1
    n_dev = n_dev or n_acc
    counts = np.zeros((n_acc, n_dev))
    late = 0
    for c in claims:
        if c.rep_date > as_of or c.acc_date.year < first_year:
            continue
        i = c.acc_date.year - first_year
        j = c.rep_date.year - c.acc_date.year
        if j >= n_dev:
            j = n_dev - 1
            late += 1
        counts[i, j] += 1
    if late:
        log.warning("%d claims reported beyond the last development year; counted in the last column", late)
    for i in range(n_acc):
        counts[i, max(0, n_acc - i):] = np.nan
    return RunoffTriangle(counts, [first_year + i for i in range(n_acc)])
