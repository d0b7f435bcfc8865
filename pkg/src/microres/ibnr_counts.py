"""Counts of incurred-but-not-reported claims.

Reporting delays of one accident year follow a multinomial law over the
development years with a probability vector shared by all accident years.
The number of claims still to be reported for year ``i`` is negative binomial
with ``r_i`` = claims observed so far and success probability ``p_i`` = mass of
the observed development years, so that ``E = r(1-p)/p`` and
``Var = r(1-p)/p**2``.  The probability vector is estimated through
chain-ladder development factors, which makes the expected counts coincide
with the chain-ladder projection.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class RunoffTriangle:
    """Incremental accident x development array; NaN marks unobserved cells."""

    values: np.ndarray
    origins: list = field(default_factory=list)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("triangle must be two-dimensional")
        if not self.origins:
            self.origins = list(range(self.values.shape[0]))
        if np.any(self.values[self.observed] < 0):
            raise ValueError("triangle values must be non-negative")

    @property
    def n_acc(self) -> int:
        return self.values.shape[0]

    @property
    def n_dev(self) -> int:
        return self.values.shape[1]

    @property
    def observed(self) -> np.ndarray:
        return ~np.isnan(self.values)

    def last_observed(self) -> np.ndarray:
        """Index of the last observed development column per accident year (-1 if none)."""
        obs = self.observed
        idx = np.where(obs, np.arange(self.n_dev)[None, :], -1)
        return idx.max(axis=1)

    def observed_totals(self) -> np.ndarray:
        return np.nansum(self.values, axis=1)

    def cumulative(self) -> np.ndarray:
        """Cumulative sums along development; NaN where unobserved."""
        return np.where(self.observed, np.cumsum(np.nan_to_num(self.values), axis=1), np.nan)

    def write_csv(self, stream: TextIO) -> None:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(["origin"] + [str(j) for j in range(self.n_dev)])
        for origin, row in zip(self.origins, self.values):
            writer.writerow([origin] + ["" if np.isnan(v) else f"{v:.10g}" for v in row])

    @classmethod
    def read_csv(cls, stream: TextIO) -> "RunoffTriangle":
        reader = csv.reader(stream)
        header = next(reader, None)
        if header is None:
            raise ValueError("empty triangle file")
        origins, rows = [], []
        for line, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise ValueError(f"line {line}: expected {len(header)} fields")
            origins.append(rec[0])
            try:
                rows.append([float(v) if v.strip() else np.nan for v in rec[1:]])
            except ValueError:
                raise ValueError(f"line {line}: non-numeric cell") from None
        return cls(np.array(rows, dtype=float).reshape(len(rows), len(header) - 1), origins)


def development_factors(tri: RunoffTriangle) -> tuple[np.ndarray, list[str]]:
    """Volume-weighted age-to-age factors ``f_j`` (column ``j`` to ``j+1``)."""
    cum = tri.cumulative()
    flags: list[str] = []
    f = np.ones(tri.n_dev - 1)
    for j in range(tri.n_dev - 1):
        both = ~np.isnan(cum[:, j + 1]) & ~np.isnan(cum[:, j])
        den = cum[both, j].sum()
        num = cum[both, j + 1].sum()
        if den > 0:
            f[j] = num / den
        else:
            flags.append(f"factor {j} undefined (zero volume); set to 1")
    return f, flags


def estimate_reporting_probs(tri: RunoffTriangle) -> tuple[np.ndarray, list[str]]:
    """Reporting-delay probabilities from chain-ladder factors."""
    if not np.nansum(tri.values) > 0:
        raise ValueError("triangle has no observed claims")
    f, flags = development_factors(tri)
    tail = np.concatenate([np.cumprod(f[::-1])[::-1], [1.0]])
    beta = 1.0 / tail
    pi = np.diff(np.concatenate([[0.0], beta]))
    for j in np.flatnonzero(pi[1:] == 0) + 1:
        flags.append(f"development year {j} has no reported claims; probability 0")
    return np.clip(pi, 0.0, None), flags


def standardize_tail(pi, n_observed: int) -> np.ndarray:
    """Probabilities of the unobserved development years, renormalised to 1."""
    pi = np.asarray(pi, dtype=float)
    tail = pi[n_observed:]
    if len(tail) == 0:
        raise ValueError("no unobserved development years")
    mass = tail.sum()
    if mass <= 0:
        raise ValueError("unobserved development years have zero probability; expected IBNR is 0")
    return tail / mass


@dataclass
class IbnrCountModel:
    pi: np.ndarray
    r: np.ndarray
    p: np.ndarray
    n_observed: np.ndarray  # observed development columns per accident year
    origins: list
    flags: list[str] = field(default_factory=list)

    @property
    def n_dev(self) -> int:
        return len(self.pi)

    def to_dict(self) -> dict:
        return {
            "pi": self.pi.tolist(), "r": self.r.tolist(), "p": self.p.tolist(),
            "n_observed": self.n_observed.tolist(), "origins": [str(o) for o in self.origins],
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "IbnrCountModel":
        return cls(np.array(data["pi"]), np.array(data["r"]), np.array(data["p"]),
                   np.array(data["n_observed"], dtype=int), list(data["origins"]), list(data.get("flags", [])))


def fit_ibnr_counts(tri: RunoffTriangle) -> IbnrCountModel:
    pi, flags = estimate_reporting_probs(tri)
    last = tri.last_observed()
    n_observed = last + 1
    p = np.array([pi[:k].sum() for k in n_observed])
    p = np.clip(p, 0.0, 1.0)
    p[n_observed >= len(pi)] = 1.0
    if np.any(p <= 0):
        raise ValueError("an accident year has zero observed reporting probability")
    return IbnrCountModel(pi, tri.observed_totals(), p, n_observed, list(tri.origins), flags)


def expected_ibnr(model: IbnrCountModel) -> tuple[np.ndarray, float]:
    per_year = model.r * (1 - model.p) / model.p
    return per_year, float(per_year.sum())


def variance_ibnr(model: IbnrCountModel) -> np.ndarray:
    return model.r * (1 - model.p) / model.p**2


def negative_binomial(r, p, size, rng: np.random.Generator) -> np.ndarray:
    """Failures before ``r`` successes; degenerate at 0 when ``r == 0`` or ``p == 1``."""
    if r <= 0 or p >= 1:
        return np.zeros(size, dtype=np.int64)
    return rng.negative_binomial(r, p, size=size)


@dataclass
class IbnrDraws:
    per_year: np.ndarray  # (n_draws, n_acc)
    cells: np.ndarray  # (n_draws, n_acc, n_dev); zero in observed cells

    @property
    def totals(self) -> np.ndarray:
        return self.per_year.sum(axis=1)


def sample_ibnr(model: IbnrCountModel, n_draws: int, rng: np.random.Generator) -> IbnrDraws:
    """Negative-binomial yearly counts allocated over the unobserved development years."""
    n_acc = len(model.r)
    per_year = np.zeros((n_draws, n_acc), dtype=np.int64)
    cells = np.zeros((n_draws, n_acc, model.n_dev), dtype=np.int64)
    for i in range(n_acc):
        k = int(model.n_observed[i])
        if k >= model.n_dev or model.p[i] >= 1:
            continue
        counts = negative_binomial(model.r[i], model.p[i], n_draws, rng)
        per_year[:, i] = counts
        try:
            tail = standardize_tail(model.pi, k)
        except ValueError:
            continue
        cells[:, i, k:] = rng.multinomial(counts, tail)
    return IbnrDraws(per_year, cells)


def write_draws(draws: IbnrDraws, origins, stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["draw"] + [str(o) for o in origins] + ["total"])
    for d, row in enumerate(draws.per_year):
        writer.writerow([d] + [int(v) for v in row] + [int(row.sum())])
