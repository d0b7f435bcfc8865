"""One-hot encoding of binned and categorical covariates.

Each numeric covariate is cut by a :class:`BinningSpec`; the most frequent
bin in the training data is the reference level and bins never seen in
training get no column.  Static categorical covariates keep levels with at
least ``nMinLev`` training rows, lump the rest into ``other``, and map unseen
levels to the reference level (counted).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .binning import BinningSpec

OTHER = "other"

# covariates per model index (state); base covariates are appended
_TIME_VARS = {
    0: ("deltRep", "fastRep", "inProcTime"),
    1: ("deltRep", "fastRep", "inProcTime", "inStateTime", "delt1Pay"),
    2: ("deltRep", "fastRep", "inProcTime", "inStateTime", "delt1Pay", "cumDelt1Pay"),
}
INTEGER_VARS = ("deltRep", "inProcTime", "inStateTime")
CONTINUOUS_VARS = ("delt1Pay", "cumDelt1Pay")


def time_variables(model_index: int) -> tuple[str, ...]:
    return _TIME_VARS[min(model_index, 2)]


def payment_variables(model_index: int) -> tuple[str, ...]:
    return time_variables(model_index) + ("terminal",)


@dataclass
class BinnedVariable:
    name: str
    spec: BinningSpec
    reference: int
    kept: list[int]

    def column_names(self) -> list[str]:
        labels = self.spec.labels()
        return [f"{self.name}{labels[k]}" for k in self.kept]

    def encode(self, values) -> np.ndarray:
        idx = self.spec.apply(values)
        out = np.zeros((len(idx), len(self.kept)))
        for j, k in enumerate(self.kept):
            out[:, j] = idx == k
        return out

    def to_dict(self) -> dict:
        return {"kind": "binned", "name": self.name, "spec": self.spec.to_dict(),
                "reference": self.reference, "kept": list(self.kept)}


@dataclass
class CategoricalVariable:
    name: str
    levels: list[str]
    mapping: dict[str, int]
    reference: int
    kept: list[int]
    unseen: int = 0

    def column_names(self) -> list[str]:
        return [f"{self.name}[{self.levels[k]}]" for k in self.kept]

    def codes(self, values) -> np.ndarray:
        """Level index of each raw value; unseen values go to the reference."""
        values = np.asarray(values, dtype=object)
        uniq, inv = np.unique(values.astype(str), return_inverse=True)
        lookup = np.empty(len(uniq), dtype=int)
        for i, u in enumerate(uniq):
            code = self.mapping.get(u)
            if code is None:
                code = self.reference
                self.unseen += int(np.sum(inv == i))
            lookup[i] = code
        return lookup[inv.reshape(-1)]

    def encode(self, values) -> np.ndarray:
        values = np.asarray(values)
        idx = values if values.dtype.kind in "iu" else self.codes(values)
        out = np.zeros((len(idx), len(self.kept)))
        for j, k in enumerate(self.kept):
            out[:, j] = idx == k
        return out

    def to_dict(self) -> dict:
        return {"kind": "categorical", "name": self.name, "levels": list(self.levels),
                "mapping": dict(self.mapping), "reference": self.reference, "kept": list(self.kept)}


@dataclass
class FeatureEncoder:
    variables: list = field(default_factory=list)

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    @property
    def column_names(self) -> list[str]:
        cols = ["(intercept)"]
        for v in self.variables:
            cols += v.column_names()
        return cols

    @property
    def n_columns(self) -> int:
        return len(self.column_names)

    def transform(self, columns: Mapping[str, np.ndarray], n: int | None = None) -> np.ndarray:
        if n is None:
            n = len(next(iter(columns.values()))) if columns else 1
        blocks = [np.ones((n, 1))]
        for v in self.variables:
            blocks.append(v.encode(columns[v.name]))
        return np.hstack(blocks)

    def unseen_counts(self) -> dict[str, int]:
        return {v.name: v.unseen for v in self.variables if isinstance(v, CategoricalVariable)}

    def to_dict(self) -> dict:
        return {"variables": [v.to_dict() for v in self.variables]}

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureEncoder":
        out = []
        for d in data.get("variables", []):
            if d["kind"] == "binned":
                out.append(BinnedVariable(d["name"], BinningSpec.from_dict(d["spec"]), d["reference"], d["kept"]))
            else:
                out.append(CategoricalVariable(d["name"], d["levels"], {k: int(v) for k, v in d["mapping"].items()},
                                               d["reference"], d["kept"]))
        return cls(out)


def binned_variable(name: str, spec: BinningSpec, values) -> BinnedVariable:
    counts = np.bincount(spec.apply(values), minlength=spec.n_bins)
    ref = int(np.argmax(counts))
    kept = [k for k in range(spec.n_bins) if counts[k] > 0 and k != ref]
    return BinnedVariable(name, spec, ref, kept)


def categorical_variable(name: str, values, min_count: int) -> CategoricalVariable:
    values = np.asarray(values, dtype=object).astype(str)
    uniq, counts = np.unique(values, return_counts=True)
    frequent = [(u, c) for u, c in zip(uniq, counts) if c >= min_count and u != OTHER]
    rare_total = int(counts.sum() - sum(c for _, c in frequent))
    levels = [u for u, _ in frequent]
    level_counts = [c for _, c in frequent]
    if rare_total > 0:
        levels.append(OTHER)
        level_counts.append(rare_total)
    mapping = {u: i for i, u in enumerate(levels)}
    if rare_total > 0:
        for u in uniq:
            if u not in mapping:
                mapping[u] = len(levels) - 1
    if not levels:
        levels, level_counts, mapping = [OTHER], [0], {}
    # most frequent level is the reference; ties go to the first in sorted order
    ref = int(np.argmax(level_counts))
    kept = [k for k in range(len(levels)) if k != ref and level_counts[k] > 0]
    return CategoricalVariable(name, levels, mapping, ref, kept)


def build_encoder(
    columns: Mapping[str, np.ndarray],
    specs: Mapping[str, BinningSpec],
    categorical: Sequence[str],
    min_level_count: int,
) -> FeatureEncoder:
    variables: list = []
    for name, spec in specs.items():
        var = binned_variable(name, spec, columns[name])
        if var.kept:
            variables.append(var)
    for name in categorical:
        var = categorical_variable(name, columns[name], min_level_count)
        if var.kept:
            variables.append(var)
    return FeatureEncoder(variables)
