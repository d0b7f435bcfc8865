"""Model configuration.

Hyper-parameter names in config files are the camelCase names used by
practitioners (``perLen``, ``minPayVal``, ``nMinModT`` ...); attributes on
:class:`ModelConfig` are their snake_case equivalents.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Mapping

import yaml

# file key -> attribute
ALIASES = {
    "perLen": "per_len",
    "minPayVal": "min_pay_val",
    "nMinLev": "n_min_lev",
    "nGroups": "n_groups",
    "nGroupsFin": "n_groups",
    "nMinTimeLev": "n_min_time_lev",
    "nMaxLevInState": "n_max_lev_in_state",
    "nMaxLevInProc": "n_max_lev_in_proc",
    "maxMod": "max_mod",
    "npmax": "npmax",
    "nMinModT": "n_min_mod_t",
    "nMinNoModT": "n_min_no_mod_t",
    "nTimesParamsT": "n_times_params_t",
    "nBins": "n_bins",
    "nMinModP": "n_min_mod_p",
    "nMinNoModP": "n_min_no_mod_p",
    "nTimesParamsP": "n_times_params_p",
    "nSims": "n_sims",
    "fixedTimeMax": "fixed_time_max",
    "processCap": "process_cap",
    "evalDate": "eval_date",
    "seed": "rng_seed",
}


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    # pre-processing
    per_len: int = 30
    min_pay_val: float = 200.0
    n_min_lev: int = 30
    n_groups: int = 5
    # time process
    n_min_time_lev: int = 30
    n_max_lev_in_state: int = 12
    n_max_lev_in_proc: int = 24
    max_mod: int = 6
    n_min_mod_t: int = 500
    n_min_no_mod_t: int = 50
    n_times_params_t: int = 5
    # payment process
    n_bins: int = 4
    n_min_mod_p: int = 500
    n_min_no_mod_p: int = 50
    n_times_params_p: int = 5
    split_quantiles: tuple[float, float] = (0.05, 0.95)
    # state index -> explicit split points (currency units); overrides quantiles
    payment_splits: dict[int, list[float]] = field(default_factory=dict)
    # simulation
    n_sims: int = 100
    fixed_time_max: int = 24
    npmax: int = 50
    process_cap: int = 180
    report_cap: int = 240
    payment_mode: str = "expected"  # or "sample"
    ibnr_mode: str = "draw"  # or "mean"
    n_ibnr_draws: int = 1000
    eval_date: dt.date | None = None
    rng_seed: int = 0
    # binning
    loess_span: float = 0.75
    n_bootstrap: int = 10
    bootstrap_size: int = 100_000
    # estimation engine
    glm_tol: float = 1e-8
    glm_max_iter: int = 200
    glm_ridge: float = 1e-8
    reporting_constant: float | None = None
    # input format
    date_format: str = "%d-%m-%Y"
    delimiter: str = ","

    def __post_init__(self) -> None:
        self.validate()

    @property
    def min_pay_cents(self) -> int:
        return int(round(self.min_pay_val * 100))

    @property
    def pooled_state(self) -> int:
        """Index of the last time/payment model; higher states reuse it."""
        return self.max_mod - 1

    def validate(self) -> None:
        counts = (
            "per_len", "n_min_lev", "n_groups", "n_min_time_lev", "n_max_lev_in_state",
            "n_max_lev_in_proc", "max_mod", "npmax", "n_min_mod_t", "n_min_no_mod_t",
            "n_times_params_t", "n_min_mod_p", "n_min_no_mod_p", "n_times_params_p",
            "n_sims", "fixed_time_max", "process_cap", "report_cap", "n_ibnr_draws",
            "n_bootstrap", "bootstrap_size", "glm_max_iter",
        )
        for name in counts:
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.max_mod > self.npmax:
            raise ConfigError(f"maxMod ({self.max_mod}) must not exceed npmax ({self.npmax})")
        if self.n_bins < 3:
            raise ConfigError(f"nBins must be at least 3, got {self.n_bins}")
        if self.min_pay_val < 0:
            raise ConfigError("minPayVal must be non-negative")
        lo, hi = self.split_quantiles
        if not 0 < lo < hi < 1:
            raise ConfigError(f"split_quantiles must satisfy 0 < lo < hi < 1, got {self.split_quantiles}")
        if self.payment_mode not in ("expected", "sample"):
            raise ConfigError(f"payment_mode must be 'expected' or 'sample', got {self.payment_mode!r}")
        if self.ibnr_mode not in ("draw", "mean"):
            raise ConfigError(f"ibnr_mode must be 'draw' or 'mean', got {self.ibnr_mode!r}")
        for state, splits in self.payment_splits.items():
            if len(splits) != self.n_bins - 1:
                raise ConfigError(f"payment_splits[{state}] needs {self.n_bins - 1} points")
            if any(a >= b for a, b in zip(splits[:-1], splits[1:])):
                raise ConfigError(f"payment_splits[{state}] must be strictly increasing")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "ModelConfig":
        """Build from a flat or sectioned mapping using file or attribute names."""
        flat: dict[str, Any] = {}
        for key, value in data.items():
            if isinstance(value, Mapping) and key not in ("payment_splits", "paymentSplits"):
                flat.update(value)
            else:
                flat[key] = value
        known = {f.name for f in fields(cls)}
        kwargs: dict[str, Any] = {}
        for key, value in flat.items():
            name = ALIASES.get(key, key)
            if name == "paymentSplits":
                name = "payment_splits"
            if name not in known:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[name] = value
        if "eval_date" in kwargs and isinstance(kwargs["eval_date"], str):
            kwargs["eval_date"] = dt.date.fromisoformat(kwargs["eval_date"])
        if "split_quantiles" in kwargs:
            kwargs["split_quantiles"] = tuple(float(q) for q in kwargs["split_quantiles"])
        if "payment_splits" in kwargs:
            kwargs["payment_splits"] = {
                int(k): [float(b) for b in v] for k, v in (kwargs["payment_splits"] or {}).items()
            }
        return cls(**kwargs)

    def to_mapping(self) -> dict[str, Any]:
        reverse = {v: k for k, v in ALIASES.items() if k != "nGroupsFin"}
        out: dict[str, Any] = {}
        for key, value in asdict(self).items():
            if isinstance(value, dt.date):
                value = value.isoformat()
            if isinstance(value, tuple):
                value = list(value)
            out[reverse.get(key, key)] = value
        return out

    def replace(self, **changes: Any) -> "ModelConfig":
        data = asdict(self)
        data.update(changes)
        return ModelConfig(**data)


def load_config(path) -> ModelConfig:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path}: top level must be a mapping")
    return ModelConfig.from_mapping(data)


def dump_config(config: ModelConfig, path) -> None:
    sections = {
        "preprocessing": ["perLen", "minPayVal", "nMinLev", "nGroups", "date_format", "delimiter"],
        "time": ["nMinTimeLev", "nMaxLevInState", "nMaxLevInProc", "maxMod", "nMinModT",
                 "nMinNoModT", "nTimesParamsT"],
        "payment": ["nBins", "nMinModP", "nMinNoModP", "nTimesParamsP", "split_quantiles",
                    "payment_splits"],
        "simulation": ["nSims", "fixedTimeMax", "npmax", "processCap", "report_cap",
                       "payment_mode", "ibnr_mode", "n_ibnr_draws", "evalDate", "seed"],
    }
    flat = config.to_mapping()
    out: dict[str, dict[str, Any]] = {}
    for section, keys in sections.items():
        out[section] = {k: flat.pop(k) for k in keys}
    out["engine"] = flat
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(out, fh, sort_keys=False)
