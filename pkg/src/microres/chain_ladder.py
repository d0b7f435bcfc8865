"""Chain-ladder projection and the over-dispersed Poisson bootstrap."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence, TextIO

import numpy as np

from .ibnr_counts import RunoffTriangle, development_factors


@dataclass
class ClProjection:
    factors: np.ndarray
    cumulative: np.ndarray  # completed cumulative triangle
    latest: np.ndarray
    ultimate: np.ndarray
    flags: list[str] = field(default_factory=list)

    @property
    def reserve(self) -> np.ndarray:
        return self.ultimate - self.latest

    @property
    def total(self) -> float:
        return float(self.reserve.sum())

    @property
    def incremental(self) -> np.ndarray:
        return np.diff(np.concatenate([np.zeros((self.cumulative.shape[0], 1)), self.cumulative], axis=1), axis=1)


def cl_project(tri: RunoffTriangle) -> ClProjection:
    f, flags = development_factors(tri)
    cum = tri.cumulative()
    last = tri.last_observed()
    full = np.array(cum)
    for i in range(tri.n_acc):
        k = last[i]
        if k < 0:
            full[i, :] = 0.0
            flags.append(f"accident year {tri.origins[i]} has no observed cells")
            continue
        for j in range(k + 1, tri.n_dev):
            full[i, j] = full[i, j - 1] * f[j - 1]
    latest = np.array([cum[i, last[i]] if last[i] >= 0 else 0.0 for i in range(tri.n_acc)])
    return ClProjection(f, full, latest, full[:, -1], flags)


def _fitted_incremental(tri: RunoffTriangle, f: np.ndarray) -> np.ndarray:
    """Back-fitted incremental means on the observed cells (NaN elsewhere)."""
    cum = tri.cumulative()
    last = tri.last_observed()
    fitted = np.full(tri.values.shape, np.nan)
    for i in range(tri.n_acc):
        k = last[i]
        if k < 0:
            continue
        m = np.empty(k + 1)
        m[k] = cum[i, k]
        for j in range(k - 1, -1, -1):
            m[j] = m[j + 1] / f[j] if f[j] > 0 else 0.0
        fitted[i, :k + 1] = np.diff(np.concatenate([[0.0], m]))
    return fitted


@dataclass
class OdpBootstrap:
    totals: np.ndarray
    per_year: np.ndarray
    phi: float
    n_cells: int
    n_params: int

    def quantiles(self, probs: Sequence[float]) -> np.ndarray:
        return np.quantile(self.totals, probs)


def odp_bootstrap(tri: RunoffTriangle, n_boot: int, rng: np.random.Generator) -> OdpBootstrap:
    """England-Verrall bootstrap of the outstanding total.

    Unscaled Pearson residuals are bias-adjusted by ``sqrt(n/(n-p))`` and
    resampled; each pseudo triangle is re-projected and gamma process noise
    with the ODP scale is added to every future cell.
    """
    f, _ = development_factors(tri)
    fitted = _fitted_incremental(tri, f)
    obs = tri.observed & ~np.isnan(fitted)
    if np.any(fitted[obs] < -1e-9 * max(1.0, np.nanmax(np.abs(fitted)))):
        raise ValueError("negative fitted incremental values; the ODP bootstrap does not apply")
    m = np.clip(fitted, 0.0, None)
    x = tri.values
    usable = obs & (m > 0)
    resid = np.zeros(tri.values.shape)
    resid[usable] = (x[usable] - m[usable]) / np.sqrt(m[usable])
    n = int(obs.sum())
    p = tri.n_acc + tri.n_dev - 1
    dof = n - p
    phi = float((resid[usable] ** 2).sum() / dof) if dof > 0 else 0.0
    adj = np.sqrt(n / dof) if dof > 0 else 1.0
    pool = resid[usable] * adj
    future = ~tri.observed
    totals = np.zeros(n_boot)
    per_year = np.zeros((n_boot, tri.n_acc))
    cells = np.argwhere(usable)
    for b in range(n_boot):
        pseudo = np.array(tri.values)
        if len(pool):
            draw = pool[rng.integers(0, len(pool), size=len(cells))]
            rows, cols = cells[:, 0], cells[:, 1]
            pseudo[rows, cols] = m[rows, cols] + draw * np.sqrt(m[rows, cols])
        proj = cl_project(_unchecked_triangle(pseudo, tri.origins))
        mean = np.where(future, proj.incremental, 0.0)
        if phi > 0:
            mag = np.abs(mean)
            shape = np.where(mag > 0, mag / phi, 1.0)
            noise = rng.gamma(shape, phi)
            sim = np.where(mag > 0, np.sign(mean) * noise, 0.0)
        else:
            sim = mean
        per_year[b] = sim.sum(axis=1)
        totals[b] = per_year[b].sum()
    return OdpBootstrap(totals, per_year, phi, n, p)


def _unchecked_triangle(values: np.ndarray, origins) -> RunoffTriangle:
    """Pseudo triangles may hold negative increments; skip the sign check."""
    tri = RunoffTriangle.__new__(RunoffTriangle)
    tri.values = values
    tri.origins = origins
    return tri


def write_quantile_report(boot: OdpBootstrap, projection: ClProjection, stream: TextIO,
                          probs: Sequence[float] = (0.05, 0.25, 0.5, 0.75, 0.95, 0.995)) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["statistic", "value"])
    writer.writerow(["cl_total", f"{projection.total:.6f}"])
    writer.writerow(["bootstrap_mean", f"{boot.totals.mean():.6f}"])
    writer.writerow(["bootstrap_sd", f"{boot.totals.std(ddof=1) if len(boot.totals) > 1 else 0.0:.6f}"])
    writer.writerow(["phi", f"{boot.phi:.6f}"])
    for q, v in zip(probs, boot.quantiles(probs)):
        writer.writerow([f"q{q:g}", f"{v:.6f}"])
