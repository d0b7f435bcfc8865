"""Fit, persist and simulate: the steps shared by the CLI and the scripts."""

from __future__ import annotations

import datetime as dt
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .claims_data import Claim, PeriodTable, build_state_datasets, build_triangle, discretize_portfolio, open_claim_at
from .config import ModelConfig, dump_config, load_config
from .ibnr_counts import IbnrCountModel, fit_ibnr_counts
from .payment_model import SplicedPaymentModel, fit_payment_models
from .simulator import ClaimState, ModelSet, ReserveDistribution, simulate_portfolio
from .time_model import HazardModel, ReportingModel, fit_reporting_model, fit_time_models

log = logging.getLogger(__name__)

MODEL_FILES = ("time_models.json", "payment_models.json", "reporting.json", "meta.json")


class ModelsNotFound(FileNotFoundError):
    pass


class SchemaMismatch(ValueError):
    pass


SCHEMA_VERSION = 1


@dataclass
class FitResult:
    models: ModelSet
    table: PeriodTable
    n_anomalies: int
    as_of: dt.date | None
    summary: dict


def data_summary(datasets, payment_models: Sequence[SplicedPaymentModel]) -> dict:
    """Outcome counts and payment-bin counts per model index, persisted next to the fits."""
    transitions, bins = [], []
    for ds, pm in zip(datasets, payment_models):
        transitions.append(np.bincount(ds.table.transition, minlength=4).tolist())
        pay = ds.payments().payment
        bins.append(np.bincount(pm.bin_of(pay), minlength=pm.n_bins).tolist() if len(pay) else [0] * pm.n_bins)
    return {"transition_counts": transitions, "bin_counts": bins}


def reporting_delays(claims: Sequence[Claim], per_len: int, as_of: dt.date | None = None) -> np.ndarray:
    """Reporting delay in periods (>= 1) of every claim reported by ``as_of``."""
    out = []
    for c in claims:
        if as_of is not None and c.rep_date > as_of:
            continue
        out.append(max(1, math.ceil((c.rep_date - c.acc_date).days / per_len)))
    return np.array(out, dtype=int)


def fit_all(claims: Sequence[Claim], config: ModelConfig, as_of: dt.date | None = None,
            with_ibnr: bool = True) -> FitResult:
    """Time, payment, reporting and IBNR count models from claims censored at ``as_of``."""
    table, anomalies = discretize_portfolio(claims, config, as_of)
    for a in anomalies:
        log.warning("anomaly %s: %s", a.policy_id, a.reason)
    datasets = build_state_datasets(table, config)
    time_models = fit_time_models(datasets, config, table.base_names)
    payment_tables = [ds.payments() for ds in datasets]
    payment_models = fit_payment_models(payment_tables, [m.specs for m in time_models], config)
    reporting = fit_reporting_model(reporting_delays(claims, config.per_len, as_of), config)
    ibnr = None
    if with_ibnr and as_of is not None:
        tri = build_triangle(claims, as_of)
        if tri.n_acc > 1 and np.nansum(tri.values) > 0:
            ibnr = fit_ibnr_counts(tri)
    models = ModelSet(time_models, payment_models, reporting, ibnr, list(table.base_names))
    summary = data_summary(datasets, payment_models)
    summary["n_anomalies"] = len(anomalies)
    summary["n_rows"] = len(table)
    return FitResult(models, table, len(anomalies), as_of, summary)


def open_states(claims: Sequence[Claim], config: ModelConfig, as_of: dt.date) -> tuple[list[ClaimState], list[float]]:
    """Simulation start states of the claims open at ``as_of`` and their paid-to-date amounts."""
    states, paid = [], []
    for c in sorted(claims, key=lambda c: c.policy_id):
        oc = open_claim_at(c, config, as_of)
        if oc is None:
            continue
        states.append(ClaimState.from_open_claim(oc))
        paid.append(oc.cum_at_eval / 100)
    return states, paid


def simulate_all(claims: Sequence[Claim], models: ModelSet, config: ModelConfig, as_of: dt.date,
                 n_sims: int | None = None, seed: int | None = None, workers: int = 1) -> ReserveDistribution:
    states, paid = open_states(claims, config, as_of)
    return simulate_portfolio(states, models, config, as_of=as_of, n_sims=n_sims, seed=seed, workers=workers,
                              cum_at_eval=paid)


# -- persistence ---------------------------------------------------------------

def _dump(path: Path, data) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=1, sort_keys=True)
        fh.write("\n")


def save_models(models: ModelSet, config: ModelConfig, out_dir, as_of: dt.date | None = None,
                summary: dict | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _dump(out / "time_models.json", [m.to_dict() for m in models.time_models])
    _dump(out / "payment_models.json", [m.to_dict() for m in models.payment_models])
    _dump(out / "reporting.json", models.reporting.to_dict() if models.reporting else None)
    _dump(out / "ibnr.json", models.ibnr.to_dict() if models.ibnr else None)
    _dump(out / "meta.json", {"schema": SCHEMA_VERSION, "base_names": list(models.base_names),
                              "as_of": as_of.isoformat() if as_of else None})
    if summary is not None:
        _dump(out / "data_summary.json", summary)
    dump_config(config, out / "config.yaml")


def load_models(model_dir) -> tuple[ModelSet, ModelConfig, dt.date | None]:
    d = Path(model_dir)
    missing = [f for f in MODEL_FILES if not (d / f).exists()]
    if missing:
        raise ModelsNotFound(f"models not found in {d}: missing {', '.join(missing)}")
    with open(d / "meta.json") as fh:
        meta = json.load(fh)
    if meta.get("schema") != SCHEMA_VERSION:
        raise SchemaMismatch(f"model schema {meta.get('schema')} != {SCHEMA_VERSION}")

    def read(name):
        with open(d / name) as fh:
            return json.load(fh)

    try:
        time_models = [HazardModel.from_dict(x) for x in read("time_models.json")]
        payment_models = [SplicedPaymentModel.from_dict(x) for x in read("payment_models.json")]
        rep = read("reporting.json")
        ibnr = read("ibnr.json") if (d / "ibnr.json").exists() else None
    except (KeyError, TypeError) as err:
        raise SchemaMismatch(f"malformed model file: {err}") from None
    models = ModelSet(time_models, payment_models, ReportingModel.from_dict(rep) if rep else None,
                      IbnrCountModel.from_dict(ibnr) if ibnr else None, list(meta.get("base_names", [])))
    config = load_config(d / "config.yaml") if (d / "config.yaml").exists() else ModelConfig()
    as_of = dt.date.fromisoformat(meta["as_of"]) if meta.get("as_of") else None
    return models, config, as_of
