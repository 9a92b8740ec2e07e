"""Trial dataset ingestion, covariate encodings and fold assignment."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
from scipy.stats import rankdata

from ._rng import derive_rng

__all__ = [
    "LoadError",
    "CovariateColumn",
    "Covariates",
    "TrialDataset",
    "DesignMatrix",
    "FoldAssignment",
    "SchemaConfig",
    "load_dataset",
    "encode",
    "assign_folds",
]

OutcomeKind = Literal["continuous", "binary"]


class LoadError(ValueError):
    """Raised when an input table does not satisfy its schema."""


@dataclass(frozen=True)
class CovariateColumn:
    """One covariate. Categorical values are dense level indices into ``levels``."""

    name: str
    kind: Literal["numeric", "categorical"]
    values: np.ndarray
    levels: tuple[str, ...] | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if self.kind == "numeric":
            if not np.all(np.isfinite(values)):
                raise LoadError(f"numeric covariate {self.name!r} has non-finite values")
        elif self.kind == "categorical":
            if self.levels is None or len(self.levels) < 2:
                raise LoadError(f"categorical covariate {self.name!r} needs at least 2 levels")
            if np.any(values != np.round(values)) or values.min() < 0 or values.max() >= len(self.levels):
                raise LoadError(f"categorical covariate {self.name!r} has invalid level indices")
        else:
            raise LoadError(f"unknown covariate kind {self.kind!r}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class Covariates:
    """Column-major view of p covariates stored as an ``(n, p)`` float matrix.

    Categorical columns hold level indices; ``levels[j]`` is ``None`` for numeric
    columns. This is the input format shared by the forest and linear learners.
    """

    values: np.ndarray
    names: tuple[str, ...]
    kinds: tuple[str, ...]
    levels: tuple[tuple[str, ...] | None, ...]

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != len(self.names):
            raise ValueError("covariate matrix shape does not match names")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_columns(cls, columns: Sequence[CovariateColumn]) -> "Covariates":
        n = len(columns[0].values) if columns else 0
        mat = np.empty((n, len(columns)))
        for j, col in enumerate(columns):
            if len(col.values) != n:
                raise LoadError(f"column {col.name!r} has {len(col.values)} entries, expected {n}")
            mat[:, j] = col.values
        return cls(
            mat,
            tuple(c.name for c in columns),
            tuple(c.kind for c in columns),
            tuple(c.levels for c in columns),
        )

    @classmethod
    def numeric(cls, values: np.ndarray, names: Sequence[str] | None = None) -> "Covariates":
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        p = values.shape[1]
        names = tuple(names) if names is not None else tuple(f"X{j + 1}" for j in range(p))
        return cls(values, names, ("numeric",) * p, (None,) * p)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def categorical(self) -> np.ndarray:
        return np.array([k == "categorical" for k in self.kinds], dtype=bool)

    @property
    def n_levels(self) -> np.ndarray:
        return np.array([len(lv) if lv is not None else 0 for lv in self.levels], dtype=np.int64)

    def columns(self) -> list[CovariateColumn]:
        return [
            CovariateColumn(name, kind, self.values[:, j], lv)
            for j, (name, kind, lv) in enumerate(zip(self.names, self.kinds, self.levels))
        ]

    def subset(self, idx) -> "Covariates":
        return Covariates(self.values[idx], self.names, self.kinds, self.levels)

    def with_values(self, values: np.ndarray) -> "Covariates":
        return Covariates(values, self.names, self.kinds, self.levels)

    def add_numeric(self, name: str, column: np.ndarray) -> "Covariates":
        return Covariates(
            np.column_stack([self.values, column]),
            self.names + (name,),
            self.kinds + ("numeric",),
            self.levels + (None,),
        )

    def index(self, name: str) -> int:
        return self.names.index(name)

    def labels(self, j: int) -> np.ndarray:
        """Column ``j`` as strings (level labels for categoricals)."""
        col = self.values[:, j]
        if self.levels[j] is None:
            return col.astype(str)
        return np.asarray(self.levels[j], dtype=object)[col.astype(int)]


@dataclass(frozen=True)
class TrialDataset:
    covariates: Covariates
    treatment: np.ndarray
    outcome: np.ndarray
    outcome_kind: OutcomeKind = "continuous"
    ids: tuple[str, ...] | None = None

    def __post_init__(self):
        a = np.asarray(self.treatment, dtype=float)
        y = np.asarray(self.outcome, dtype=float)
        n = self.covariates.n
        if a.shape != (n,) or y.shape != (n,):
            raise LoadError(f"treatment/outcome must have {n} entries")
        if not np.all((a == 0) | (a == 1)):
            raise LoadError("treatment must only contain 0 and 1")
        if a.sum() == 0 or a.sum() == n:
            raise LoadError("both treatment arms must be non-empty")
        if not np.all(np.isfinite(y)):
            raise LoadError("outcome has non-finite values")
        if self.outcome_kind == "binary" and not np.all((y == 0) | (y == 1)):
            raise LoadError("binary outcome must only contain 0 and 1")
        if self.outcome_kind not in ("continuous", "binary"):
            raise LoadError(f"unknown outcome kind {self.outcome_kind!r}")
        a = a.astype(np.int64)
        a.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "treatment", a)
        object.__setattr__(self, "outcome", y)

    @property
    def n(self) -> int:
        return self.covariates.n

    @property
    def p(self) -> int:
        return self.covariates.p

    @property
    def columns(self) -> list[CovariateColumn]:
        return self.covariates.columns()

    def subset(self, idx) -> "TrialDataset":
        ids = None if self.ids is None else tuple(np.asarray(self.ids, dtype=object)[idx])
        return TrialDataset(
            self.covariates.subset(idx), self.treatment[idx], self.outcome[idx], self.outcome_kind, ids
        )


@dataclass(frozen=True)
class DesignMatrix:
    columns: np.ndarray
    column_origin: tuple[int, ...]
    column_names: tuple[str, ...]
    encoding: str

    @property
    def q(self) -> int:
        return self.columns.shape[1]


@dataclass(frozen=True)
class FoldAssignment:
    fold_of: np.ndarray
    K: int
    seed: int

    def train_test(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        test = np.flatnonzero(self.fold_of == k)
        train = np.flatnonzero(self.fold_of != k)
        return train, test


@dataclass(frozen=True)
class SchemaConfig:
    outcome: str
    treatment: str
    covariates: tuple[dict, ...]
    outcome_kind: OutcomeKind = "continuous"
    id_column: str | None = None

    @classmethod
    def from_dict(cls, doc: dict) -> "SchemaConfig":
        try:
            covs = tuple(dict(c) for c in doc["covariates"])
            for c in covs:
                if c.get("kind") not in ("numeric", "categorical") or "name" not in c:
                    raise LoadError(f"bad covariate entry in schema: {c}")
            return cls(
                outcome=doc["outcome"],
                treatment=doc["treatment"],
                covariates=covs,
                outcome_kind=doc.get("outcome_kind", "continuous"),
                id_column=doc.get("id"),
            )
        except KeyError as exc:
            raise LoadError(f"schema is missing key {exc}") from None

    @classmethod
    def from_json(cls, path: str | Path) -> "SchemaConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _sniff_delimiter(header: str) -> str:
    return "\t" if header.count("\t") > header.count(",") else ","


def _parse_binary(raw: str, what: str, row: int) -> float:
    try:
        v = float(raw)
    except ValueError:
        v = math.nan
    if v not in (0.0, 1.0):
        raise LoadError(f"{what} not in {{0,1}} at row {row}")
    return v


def load_dataset(path: str | Path, schema: SchemaConfig | dict) -> TrialDataset:
    """Read a comma- or tab-delimited table with a header row.

    Row numbers in error messages are 1-based and count data rows only.
    Missing cells are rejected; there is no imputation.
    """
    if isinstance(schema, dict):
        schema = SchemaConfig.from_dict(schema)
    with open(path, encoding="utf-8", newline="") as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise LoadError("input table has no header row")
        fh.seek(0)
        reader = csv.reader(fh, delimiter=_sniff_delimiter(header_line))
        header = [h.strip() for h in next(reader)]
        rows = [r for r in reader if any(cell.strip() for cell in r)]

    col_index = {h: i for i, h in enumerate(header)}
    needed = [schema.outcome, schema.treatment] + [c["name"] for c in schema.covariates]
    if schema.id_column:
        needed.append(schema.id_column)
    for name in needed:
        if name not in col_index:
            raise LoadError(f"missing column {name!r}")
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise LoadError(f"row {r} has {len(row)} fields, expected {len(header)}")

    def cells(name: str) -> list[str]:
        i = col_index[name]
        out = [row[i].strip() for row in rows]
        for r, v in enumerate(out, start=1):
            if v == "" or v.upper() in ("NA", "NAN"):
                raise LoadError(f"missing value in column {name!r} at row {r}")
        return out

    treatment = np.array([_parse_binary(v, "treatment", r) for r, v in enumerate(cells(schema.treatment), 1)])
    if schema.outcome_kind == "binary":
        outcome = np.array([_parse_binary(v, "outcome", r) for r, v in enumerate(cells(schema.outcome), 1)])
    else:
        outcome = np.empty(len(rows))
        for r, v in enumerate(cells(schema.outcome), 1):
            try:
                outcome[r - 1] = float(v)
            except ValueError:
                raise LoadError(f"non-numeric outcome {v!r} at row {r}") from None
            if not math.isfinite(outcome[r - 1]):
                raise LoadError(f"non-finite outcome at row {r}")

    columns = []
    for spec in schema.covariates:
        name = spec["name"]
        raw = cells(name)
        if spec["kind"] == "numeric":
            vals = np.empty(len(raw))
            for r, v in enumerate(raw, 1):
                try:
                    vals[r - 1] = float(v)
                except ValueError:
                    raise LoadError(f"non-numeric value {v!r} in column {name!r} at row {r}") from None
                if not math.isfinite(vals[r - 1]):
                    raise LoadError(f"non-finite value in column {name!r} at row {r}")
            columns.append(CovariateColumn(name, "numeric", vals))
        else:
            if "levels" in spec:
                levels = [str(lv) for lv in spec["levels"]]
                unknown = sorted(set(raw) - set(levels))
                if unknown:
                    raise LoadError(f"column {name!r} has levels {unknown} not declared in schema")
            else:
                levels = list(dict.fromkeys(raw))
            if len(set(raw)) < 2:
                raise LoadError(f"categorical column {name!r} has fewer than 2 observed levels")
            lookup = {lv: i for i, lv in enumerate(levels)}
            columns.append(CovariateColumn(name, "categorical", np.array([lookup[v] for v in raw], float), tuple(levels)))

    ids = tuple(cells(schema.id_column)) if schema.id_column else None
    try:
        return TrialDataset(Covariates.from_columns(columns), treatment, outcome, schema.outcome_kind, ids)
    except LoadError:
        raise
    except ValueError as exc:
        raise LoadError(str(exc)) from None


def midranks(x: np.ndarray) -> np.ndarray:
    return rankdata(x, method="average")


def encode(data: TrialDataset | Covariates, encoding: str = "dummy_plus_rank") -> DesignMatrix:
    """Build a design matrix.

    ``raw`` passes numeric columns through; ``rank`` / ``dummy_plus_rank`` replace
    them by midranks. Categorical columns always expand to ``L - 1`` indicators
    against the first level.
    """
    covs = data.covariates if isinstance(data, TrialDataset) else data
    if encoding not in ("raw", "rank", "dummy_plus_rank"):
        raise ValueError(f"unknown encoding {encoding!r}")
    blocks, origin, names = [], [], []
    for j in range(covs.p):
        col = covs.values[:, j]
        if covs.levels[j] is None:
            blocks.append((col if encoding == "raw" else midranks(col))[:, None])
            origin.append(j)
            names.append(covs.names[j])
        else:
            levels = covs.levels[j]
            for level in range(1, len(levels)):
                blocks.append((col == level).astype(float)[:, None])
                origin.append(j)
                names.append(f"{covs.names[j]}={levels[level]}")
    mat = np.hstack(blocks) if blocks else np.empty((covs.n, 0))
    return DesignMatrix(mat, tuple(origin), tuple(names), encoding)


def assign_folds(n: int, K: int, treatment: np.ndarray, seed: int) -> FoldAssignment:
    """Random folds stratified by treatment arm.

    Arms are dealt round-robin onto folds with the counter carried across arms,
    so fold sizes differ by at most one both within each arm and overall.
    """
    a = np.asarray(treatment).astype(int)
    if len(a) != n:
        raise ValueError("treatment length does not match n")
    arm_sizes = [int(np.sum(a == 0)), int(np.sum(a == 1))]
    if K < 2 or K > min(arm_sizes):
        raise ValueError(f"fold count K={K} must lie in [2, {min(arm_sizes)}]")
    rng = derive_rng(seed, 0xF01D)
    fold_of = np.empty(n, dtype=np.int64)
    offset = 0
    for arm in (0, 1):
        idx = rng.permutation(np.flatnonzero(a == arm))
        fold_of[idx] = (offset + np.arange(len(idx))) % K
        offset = (offset + len(idx)) % K
    fold_of.setflags(write=False)
    return FoldAssignment(fold_of, K, seed)


def kfold_indices(n: int, K: int, rng: np.random.Generator, strata: np.ndarray | None = None) -> np.ndarray:
    """Near-balanced fold labels, optionally stratified on a discrete vector."""
    fold_of = np.empty(n, dtype=np.int64)
    if strata is None:
        fold_of[rng.permutation(n)] = np.arange(n) % K
        return fold_of
    offset = 0
    for level in np.unique(strata):
        idx = rng.permutation(np.flatnonzero(strata == level))
        fold_of[idx] = (offset + np.arange(len(idx))) % K
        offset = (offset + len(idx)) % K
    return fold_of
