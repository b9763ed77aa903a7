"""Tabular data, covariate schema and design-matrix construction.

A :class:`Dataset` holds one row per employee: the binary group indicator
(1 = focal group, 0 = reference group), the log-wage outcome, a positive
sampling weight and a set of typed covariates. Categorical covariates are
stored as integer codes into the level tuple declared by the schema.

Covariates are organised in :class:`VariableBlock` objects. Blocks are the
unit of common-support enforcement, and they carry the coarsening used for
cell construction and for interaction terms (cut-points for continuous
columns, fine-to-coarse level maps for categorical ones).
"""

from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .kv import parse_kv, split_list, write_kv

log = logging.getLogger(__name__)

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"

# Used when a continuous column enters a block without declared cut-points.
DEFAULT_CUTS: dict[str, tuple[float, ...]] = {
    "age": (30.0, 40.0, 50.0),
    "tenure": (2.0, 5.0, 8.0, 16.0),
}


class SchemaError(ValueError):
    """Raised for malformed schemas or data that violate them."""


class DesignError(ValueError):
    pass


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, CATEGORICAL):
            raise SchemaError(f"column {self.name!r}: unknown type {self.kind!r}")
        if self.kind == CATEGORICAL:
            if len(self.levels) < 1:
                raise SchemaError(f"column {self.name!r}: categorical without levels")
            if len(set(self.levels)) != len(self.levels):
                raise SchemaError(f"column {self.name!r}: duplicate levels")


Coarsening = Union[Mapping[str, str], tuple[float, ...]]


@dataclass(frozen=True)
class VariableBlock:
    """Named group of covariates; ``coarsening`` maps column -> cut-points or level map."""

    name: str
    columns: tuple[str, ...]
    coarsening: Mapping[str, Coarsening] = field(default_factory=dict)


@dataclass(frozen=True)
class Schema:
    group: str
    outcome: str
    covariates: tuple[Column, ...]
    weight: str | None = None
    cluster: str | None = None
    blocks: tuple[VariableBlock, ...] = ()

    def __post_init__(self):
        names = [c.name for c in self.covariates]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate covariate names")
        seen: dict[str, str] = {}
        for b in self.blocks:
            for col in b.columns:
                if col not in names:
                    raise SchemaError(f"block {b.name!r} references unknown column {col!r}")
                if col in seen:
                    raise SchemaError(
                        f"column {col!r} appears in blocks {seen[col]!r} and {b.name!r}")
                seen[col] = b.name

    def column(self, name: str) -> Column:
        for c in self.covariates:
            if c.name == name:
                return c
        raise KeyError(name)

    def block(self, name: str) -> VariableBlock:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(f"unknown block {name!r}")

    @property
    def block_names(self) -> tuple[str, ...]:
        return tuple(b.name for b in self.blocks)


def _default_blocks(covariates: Sequence[Column], cuts: Mapping[str, tuple[float, ...]],
                    coarse: Mapping[str, Mapping[str, str]]) -> tuple[VariableBlock, ...]:
    blocks = []
    for c in covariates:
        co: dict[str, Coarsening] = {}
        if c.name in cuts:
            co[c.name] = cuts[c.name]
        if c.name in coarse:
            co[c.name] = coarse[c.name]
        blocks.append(VariableBlock(c.name, (c.name,), co))
    return tuple(blocks)


def parse_schema(text: str, source: str = "<schema>") -> Schema:
    """Parse the flat schema format.

    Each covariate line maps ``column = role[:type[:levels]]``; roles are
    ``group``, ``outcome``, ``weight``, ``cluster`` and ``covariate``. Extra keys:
    ``block.<name> = col1,col2``, ``bins.<col> = c1,c2,...`` and
    ``coarsen.<col> = level:coarse,...``. Without ``block.*`` keys every
    covariate is its own block.
    """
    kv = parse_kv(text, source)
    roles: dict[str, str | None] = {"group": None, "outcome": None, "weight": None,
                                    "cluster": None}
    covariates: list[Column] = []
    block_decl: list[tuple[str, list[str]]] = []
    cuts: dict[str, tuple[float, ...]] = {}
    coarse: dict[str, dict[str, str]] = {}
    for key, value in kv.items():
        if key.startswith("block."):
            block_decl.append((key[6:], split_list(value)))
            continue
        if key.startswith("bins."):
            try:
                cuts[key[5:]] = tuple(sorted(float(v) for v in split_list(value)))
            except ValueError:
                raise SchemaError(f"{key}: cut-points must be numbers") from None
            continue
        if key.startswith("coarsen."):
            mapping = {}
            for item in split_list(value):
                if ":" not in item:
                    raise SchemaError(f"{key}: expected level:coarse pairs")
                fine, c = item.split(":", 1)
                mapping[fine.strip()] = c.strip()
            coarse[key[8:]] = mapping
            continue
        parts = value.split(":", 2)
        role = parts[0].strip()
        if role in roles:
            if roles[role] is not None:
                raise SchemaError(f"role {role!r} declared twice")
            roles[role] = key
        elif role == "covariate":
            if len(parts) < 2:
                raise SchemaError(f"covariate {key!r}: missing type")
            kind = parts[1].strip()
            levels = tuple(split_list(parts[2])) if len(parts) > 2 else ()
            covariates.append(Column(key, kind, levels))
        else:
            raise SchemaError(f"column {key!r}: unknown role {role!r}")
    for role in ("group", "outcome"):
        if roles[role] is None:
            raise SchemaError(f"schema declares no {role} column")
    cov_names = {c.name for c in covariates}
    for col in list(cuts) + list(coarse):
        if col not in cov_names:
            raise SchemaError(f"coarsening for unknown column {col!r}")
    for col, mapping in coarse.items():
        column = next(c for c in covariates if c.name == col)
        if column.kind != CATEGORICAL:
            raise SchemaError(f"coarsen.{col}: column is not categorical")
        missing = set(column.levels) - set(mapping)
        if missing:
            raise SchemaError(f"coarsen.{col}: levels without coarse group: {sorted(missing)}")
    if block_decl:
        blocks = []
        for name, cols in block_decl:
            co: dict[str, Coarsening] = {}
            for col in cols:
                if col in cuts:
                    co[col] = cuts[col]
                if col in coarse:
                    co[col] = coarse[col]
            blocks.append(VariableBlock(name, tuple(cols), co))
        blocks = tuple(blocks)
    else:
        blocks = _default_blocks(covariates, cuts, coarse)
    return Schema(group=roles["group"], outcome=roles["outcome"], weight=roles["weight"],
                  cluster=roles["cluster"], covariates=tuple(covariates), blocks=blocks)


def load_schema(path: str | Path) -> Schema:
    path = Path(path)
    return parse_schema(path.read_text(encoding="utf-8"), source=str(path))


def schema_to_kv(schema: Schema) -> dict[str, str]:
    out: dict[str, str] = {schema.group: "group", schema.outcome: "outcome"}
    if schema.weight:
        out[schema.weight] = "weight"
    if schema.cluster:
        out[schema.cluster] = "cluster"
    for c in schema.covariates:
        out[c.name] = (f"covariate:{c.kind}:" + ",".join(c.levels)) if c.levels \
            else f"covariate:{c.kind}"
    for b in schema.blocks:
        out[f"block.{b.name}"] = ",".join(b.columns)
        for col, co in b.coarsening.items():
            if isinstance(co, Mapping):
                out[f"coarsen.{col}"] = ",".join(f"{k}:{v}" for k, v in co.items())
            else:
                out[f"bins.{col}"] = ",".join(repr(float(v)) for v in co)
    return out


class Dataset:
    """Immutable columnar table. Categorical covariates hold integer level codes."""

    def __init__(self, group, outcome, weight=None, covariates: Mapping[str, np.ndarray] | None = None,
                 schema: Schema | None = None, cluster=None):
        group = np.asarray(group)
        n = group.shape[0]
        outcome = np.asarray(outcome, dtype=float)
        weight = np.ones(n) if weight is None else np.asarray(weight, dtype=float)
        covariates = dict(covariates or {})
        if schema is None:
            cols = []
            for name, v in covariates.items():
                v = np.asarray(v)
                if v.dtype.kind in "fc":
                    cols.append(Column(name, CONTINUOUS))
                else:
                    cols.append(Column(name, CATEGORICAL,
                                       tuple(str(i) for i in range(int(v.max(initial=0)) + 1))))
            schema = Schema("group", "outcome", tuple(cols), weight="weight",
                            blocks=_default_blocks(cols, {}, {}))
        if outcome.shape != (n,) or weight.shape != (n,):
            raise SchemaError("group, outcome and weight must have equal length")
        if not np.isin(group, (0, 1)).all():
            raise SchemaError("group must be binary 0/1")
        if not np.all(np.isfinite(outcome)):
            raise SchemaError("outcome contains non-finite values")
        if not np.all(weight > 0):
            bad = int(np.flatnonzero(~(weight > 0))[0])
            raise SchemaError(f"weight must be positive (row {bad + 1})")
        self._cov: dict[str, np.ndarray] = {}
        for col in schema.covariates:
            if col.name not in covariates:
                raise SchemaError(f"missing covariate column {col.name!r}")
            v = np.asarray(covariates[col.name])
            if v.shape != (n,):
                raise SchemaError(f"covariate {col.name!r} has wrong length")
            if col.kind == CATEGORICAL:
                v = v.astype(np.int64)
                if n and (v.min() < 0 or v.max() >= len(col.levels)):
                    raise SchemaError(f"covariate {col.name!r}: code outside declared levels")
            else:
                v = v.astype(float)
                if not np.all(np.isfinite(v)):
                    raise SchemaError(f"covariate {col.name!r} contains non-finite values")
            v.setflags(write=False)
            self._cov[col.name] = v
        self.group = group.astype(np.int8)
        self.outcome = outcome
        self.weight = weight
        self.cluster = None if cluster is None else np.asarray(cluster)
        for arr in (self.group, self.outcome, self.weight):
            arr.setflags(write=False)
        self.schema = schema

    def __repr__(self):
        return (f"Dataset(n_rows={self.n_rows}, n_focal={int(self.group.sum())}, "
                f"covariates={list(self._cov)})")

    @property
    def n_rows(self) -> int:
        return int(self.group.shape[0])

    @property
    def covariates(self) -> Mapping[str, np.ndarray]:
        return self._cov

    def __getitem__(self, name: str) -> np.ndarray:
        return self._cov[name]

    def subset(self, rows, weight=None) -> "Dataset":
        """Rows selected by boolean mask or index array; optionally replace weights."""
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        w = self.weight[rows] if weight is None else weight
        return Dataset(self.group[rows], self.outcome[rows], w,
                       {k: v[rows] for k, v in self._cov.items()}, self.schema,
                       None if self.cluster is None else self.cluster[rows])

    def with_weight(self, weight) -> "Dataset":
        return Dataset(self.group, self.outcome, weight, self._cov, self.schema, self.cluster)

    def require_both_groups(self) -> None:
        w1 = self.weight[self.group == 1].sum()
        w0 = self.weight[self.group == 0].sum()
        if not (w1 > 0 and w0 > 0):
            raise SchemaError("dataset must contain both groups")

    # -- cell construction -------------------------------------------------

    def coarse_codes(self, column: str, coarsening: Coarsening | None = None) -> tuple[np.ndarray, tuple[str, ...]]:
        """Codes and labels of the coarsened version of ``column``."""
        col = self.schema.column(column)
        if coarsening is None:
            coarsening = self._block_coarsening(column)
        v = self._cov[column]
        if col.kind == CONTINUOUS:
            if coarsening is None:
                if column not in DEFAULT_CUTS:
                    raise SchemaError(f"continuous column {column!r} needs cut-points (bins.{column})")
                coarsening = DEFAULT_CUTS[column]
            cuts = np.asarray(coarsening, dtype=float)
            edges = [-np.inf, *cuts.tolist(), np.inf]
            labels = tuple(f"[{_fmt(a)},{_fmt(b)})" for a, b in zip(edges[:-1], edges[1:]))
            return np.searchsorted(cuts, v, side="right"), labels
        if coarsening is None:
            return v, col.levels
        labels: list[str] = []
        for level in col.levels:
            c = coarsening[level]
            if c not in labels:
                labels.append(c)
        lut = np.array([labels.index(coarsening[level]) for level in col.levels])
        return lut[v], tuple(labels)

    def _block_coarsening(self, column: str) -> Coarsening | None:
        for b in self.schema.blocks:
            if column in b.columns:
                return b.coarsening.get(column)
        return None

    def cell_codes(self, block_names: Sequence[str]) -> np.ndarray:
        """Dense integer cell id per row for the cross of the listed blocks."""
        cols = [c for name in block_names for c in self.schema.block(name).columns]
        if not cols:
            return np.zeros(self.n_rows, dtype=np.int64)
        parts = [self.coarse_codes(c) for c in cols]
        sizes = [len(labels) for _, labels in parts]
        if float(np.prod(sizes, dtype=float)) < 2.0 ** 62:
            key = np.zeros(self.n_rows, dtype=np.int64)
            for (codes, _), size in zip(parts, sizes):
                key = key * size + codes
        else:
            stacked = np.stack([codes for codes, _ in parts], axis=1)
            key = np.unique(stacked, axis=0, return_inverse=True)[1].reshape(-1)
        return np.unique(key, return_inverse=True)[1].reshape(-1).astype(np.int64)


def _fmt(x: float) -> str:
    if np.isinf(x):
        return "-inf" if x < 0 else "inf"
    return f"{x:g}"


# -- I/O ---------------------------------------------------------------------

def load_dataset(path: str | Path, schema: Schema | str | Path) -> Dataset:
    """Read a UTF-8 CSV with header according to ``schema``.

    Rows violating the schema are rejected; the error lists every offending
    row (1-based data row numbers, header excluded).
    """
    if not isinstance(schema, Schema):
        schema = load_schema(schema)
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = list(reader)
    index = {name: i for i, name in enumerate(header)}
    needed = [schema.group, schema.outcome] + [c.name for c in schema.covariates]
    if schema.weight:
        needed.append(schema.weight)
    if schema.cluster:
        needed.append(schema.cluster)
    missing = [c for c in needed if c not in index]
    if missing:
        raise SchemaError(f"{path}: missing mandatory column(s) {missing}")
    errors: list[str] = []
    n = len(rows)
    group = np.zeros(n, dtype=np.int8)
    outcome = np.zeros(n)
    weight = np.ones(n)
    cov = {c.name: (np.zeros(n, dtype=np.int64) if c.kind == CATEGORICAL else np.zeros(n))
           for c in schema.covariates}
    lut = {c.name: {lv: i for i, lv in enumerate(c.levels)} for c in schema.covariates
           if c.kind == CATEGORICAL}
    cluster = [] if schema.cluster else None
    for r, row in enumerate(rows):
        rowno = r + 1
        if len(row) != len(header):
            errors.append(f"row {rowno}: expected {len(header)} fields, got {len(row)}")
            continue
        g = row[index[schema.group]].strip()
        if g not in ("0", "1"):
            errors.append(f"row {rowno}: non-binary group value {g!r}")
        else:
            group[r] = int(g)
        try:
            outcome[r] = _num(row[index[schema.outcome]])
        except ValueError:
            errors.append(f"row {rowno}: outcome {row[index[schema.outcome]]!r} is not a number")
        if schema.weight:
            raw = row[index[schema.weight]]
            try:
                weight[r] = _num(raw)
                if not weight[r] > 0:
                    errors.append(f"row {rowno}: non-positive weight {raw.strip()!r}")
            except ValueError:
                errors.append(f"row {rowno}: weight {raw!r} is not a number")
        for c in schema.covariates:
            raw = row[index[c.name]].strip()
            if c.kind == CATEGORICAL:
                code = lut[c.name].get(raw)
                if code is None:
                    errors.append(f"row {rowno}: column {c.name!r} has undeclared level {raw!r}")
                else:
                    cov[c.name][r] = code
            else:
                try:
                    cov[c.name][r] = _num(raw)
                except ValueError:
                    errors.append(f"row {rowno}: column {c.name!r} value {raw!r} is not a number")
        if cluster is not None:
            cluster.append(row[index[schema.cluster]].strip())
    if errors:
        shown = errors[:20]
        more = f" (+{len(errors) - 20} more)" if len(errors) > 20 else ""
        raise SchemaError(f"{path}: " + "; ".join(shown) + more)
    return Dataset(group, outcome, weight, cov, schema,
                   None if cluster is None else np.asarray(cluster))


def _num(raw: str) -> float:
    raw = raw.strip()
    if not raw:
        raise ValueError("missing")
    x = float(raw)
    if not np.isfinite(x):
        raise ValueError("non-finite")
    return x


def save_dataset(data: Dataset, csv_path: str | Path, schema_path: str | Path | None = None) -> None:
    """Write ``data`` as CSV (plus its schema file when ``schema_path`` is given)."""
    s = data.schema
    weight_name = s.weight or "weight"
    header = [s.group, s.outcome, weight_name] + [c.name for c in s.covariates]
    cols = [data.group.astype(str), [repr(float(v)) for v in data.outcome],
            [repr(float(v)) for v in data.weight]]
    for c in s.covariates:
        v = data[c.name]
        if c.kind == CATEGORICAL:
            cols.append(np.asarray(c.levels, dtype=object)[v])
        else:
            cols.append([repr(float(x)) for x in v])
    with Path(csv_path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(zip(*cols))
    if schema_path is not None:
        if s.weight is None:
            s = Schema(s.group, s.outcome, s.covariates, weight_name, s.cluster, s.blocks)
        write_kv(schema_path, schema_to_kv(s))


# -- model specifications ----------------------------------------------------

BASELINE, FULL, ML = "Baseline", "Full", "ML"
REGIMES = (BASELINE, FULL, ML)


@dataclass(frozen=True)
class MainEffect:
    col: str


@dataclass(frozen=True)
class DummyExpansion:
    col: str
    coarse: bool = False


@dataclass(frozen=True)
class Polynomial:
    col: str
    max_degree: int


@dataclass(frozen=True)
class Binning:
    col: str
    cuts: tuple[float, ...] | None = None


@dataclass(frozen=True)
class Interaction:
    left: "Term"
    right: "Term"


Term = Union[MainEffect, DummyExpansion, Polynomial, Binning, Interaction]


@dataclass(frozen=True)
class ModelSpec:
    regime: str
    terms: tuple[Term, ...]

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")

    def without_columns(self, columns: Iterable[str]) -> "ModelSpec":
        drop = set(columns)
        return ModelSpec(self.regime, tuple(t for t in self.terms if not (term_columns(t) & drop)))

    def with_regime(self, regime: str) -> "ModelSpec":
        return ModelSpec(regime, self.terms)


def term_columns(term: Term) -> set[str]:
    if isinstance(term, Interaction):
        return term_columns(term.left) | term_columns(term.right)
    return {term.col}


def baseline_spec(schema: Schema, degree: int = 2) -> ModelSpec:
    """Dummies for every categorical, powers 1..``degree`` for every continuous column."""
    terms: list[Term] = []
    for c in schema.covariates:
        terms.append(DummyExpansion(c.name) if c.kind == CATEGORICAL else Polynomial(c.name, degree))
    return ModelSpec(BASELINE, tuple(terms))


def _interaction_term(schema: Schema, col: str) -> Term:
    return DummyExpansion(col, coarse=True) if schema.column(col).kind == CATEGORICAL else Binning(col)


def full_spec(schema: Schema, degree: int = 7,
              interactions: Sequence[tuple[str, str]] | None = None,
              baseline_degree: int = 2) -> ModelSpec:
    """Baseline terms plus high-order polynomials, bins and pairwise interactions.

    ``interactions`` lists covariate pairs; categorical members enter with
    their coarsened dummies and continuous members with their bins. The
    default interacts every pair of covariates.
    """
    base = baseline_spec(schema, baseline_degree)
    terms = list(base.terms)
    for c in schema.covariates:
        if c.kind == CONTINUOUS:
            if degree > baseline_degree:
                terms.append(Polynomial(c.name, degree))
            terms.append(Binning(c.name))
    if interactions is None:
        interactions = list(combinations([c.name for c in schema.covariates], 2))
    for a, b in interactions:
        terms.append(Interaction(_interaction_term(schema, a), _interaction_term(schema, b)))
    return ModelSpec(FULL, tuple(terms))


def ml_spec(schema: Schema, **kwargs) -> ModelSpec:
    """Candidate set for the LASSO regime: the full term list."""
    return full_spec(schema, **kwargs).with_regime(ML)


def spec_for(schema: Schema, regime: str, **kwargs) -> ModelSpec:
    if regime == BASELINE:
        return baseline_spec(schema, kwargs.get("baseline_degree", 2))
    spec = full_spec(schema, **kwargs)
    return spec.with_regime(regime)


# -- design matrices ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DesignMatrix:
    values: np.ndarray
    names: tuple[str, ...]

    @property
    def row_count(self) -> int:
        return self.values.shape[0]

    @property
    def n_columns(self) -> int:
        return self.values.shape[1]

    def rows(self, idx) -> "DesignMatrix":
        return DesignMatrix(self.values[idx], self.names)

    def select(self, names: Sequence[str]) -> "DesignMatrix":
        pos = {n: i for i, n in enumerate(self.names)}
        missing = [n for n in names if n not in pos]
        if missing:
            raise DesignError(f"design lacks columns {missing[:5]}")
        return DesignMatrix(self.values[:, [pos[n] for n in names]], tuple(names))

    def hstack(self, other: "DesignMatrix") -> "DesignMatrix":
        return DesignMatrix(np.hstack([self.values, other.values]), self.names + other.names)


def _weighted_mean_sd(x: np.ndarray, w: np.ndarray) -> tuple[float, float]:
    m = float(np.dot(w, x) / w.sum())
    sd = float(np.sqrt(np.dot(w, (x - m) ** 2) / w.sum()))
    return m, sd


def _expand(data: Dataset, term: Term) -> list[tuple[str, np.ndarray]]:
    if isinstance(term, Interaction):
        left = _expand(data, term.left)
        right = _expand(data, term.right)
        return [(f"{a}*{b}", u * v) for a, u in left for b, v in right]
    if term.col not in data.covariates:
        raise DesignError(f"term references unknown column {term.col!r}")
    col = data.schema.column(term.col)
    x = data[term.col]
    if isinstance(term, MainEffect):
        if col.kind != CONTINUOUS:
            raise DesignError(f"MainEffect needs a continuous column, {term.col!r} is categorical")
        return [(term.col, x.astype(float))]
    if isinstance(term, DummyExpansion):
        if col.kind != CATEGORICAL:
            raise DesignError(f"DummyExpansion needs a categorical column, {term.col!r} is continuous")
        if term.coarse:
            codes, labels = data.coarse_codes(term.col)
            return [(f"{term.col}~{lab}", (codes == k).astype(float))
                    for k, lab in enumerate(labels) if k > 0]
        return [(f"{term.col}={lab}", (x == k).astype(float))
                for k, lab in enumerate(col.levels) if k > 0]
    if isinstance(term, Polynomial):
        if col.kind != CONTINUOUS:
            raise DesignError(f"Polynomial needs a continuous column, {term.col!r} is categorical")
        if term.max_degree < 1:
            raise DesignError("polynomial degree must be >= 1")
        m, sd = _weighted_mean_sd(x, data.weight)
        z = (x - m) / sd if sd > 0 else x - m
        return [(f"{term.col}^{k}", z ** k) for k in range(1, term.max_degree + 1)]
    if isinstance(term, Binning):
        if col.kind != CONTINUOUS:
            raise DesignError(f"Binning needs a continuous column, {term.col!r} is categorical")
        codes, labels = data.coarse_codes(term.col, term.cuts)
        return [(f"{term.col}{lab}", (codes == k).astype(float))
                for k, lab in enumerate(labels) if k > 0]
    raise DesignError(f"unknown term {term!r}")


def build_design(data: Dataset, spec: ModelSpec, allow_empty: bool = True) -> DesignMatrix:
    """Expand ``spec`` into a real-valued design matrix (no intercept column).

    Constant columns and exact duplicates (by name or by content) are dropped
    with a logged notice; the first occurrence wins, so column order is a
    deterministic function of the term order.
    """
    names: list[str] = []
    cols: list[np.ndarray] = []
    seen_names: set[str] = set()
    seen_hash: dict[bytes, int] = {}
    dropped_const, dropped_dup = [], []
    for term in spec.terms:
        for name, v in _expand(data, term):
            if name in seen_names:
                continue
            seen_names.add(name)
            if v.size == 0 or np.ptp(v) == 0:
                dropped_const.append(name)
                continue
            v = np.ascontiguousarray(v, dtype=float)
            h = hashlib.blake2b(v.tobytes(), digest_size=16).digest()
            if h in seen_hash and np.array_equal(cols[seen_hash[h]], v):
                dropped_dup.append(name)
                continue
            seen_hash[h] = len(cols)
            names.append(name)
            cols.append(v)
    if dropped_const:
        log.info("design: dropped %d constant column(s): %s", len(dropped_const),
                 ", ".join(dropped_const[:10]))
    if dropped_dup:
        log.info("design: dropped %d duplicate column(s): %s", len(dropped_dup),
                 ", ".join(dropped_dup[:10]))
    if not cols:
        if spec.terms and not allow_empty:
            raise DesignError("design matrix is empty after dropping constant/duplicate columns")
        return DesignMatrix(np.zeros((data.n_rows, 0)), ())
    return DesignMatrix(np.column_stack(cols), tuple(names))


# -- balance -----------------------------------------------------------------

def _std_diff(x: np.ndarray, g: np.ndarray, w: np.ndarray) -> float:
    stats = []
    for k in (1, 0):
        sel = g == k
        m, sd = _weighted_mean_sd(x[sel], w[sel])
        stats.append((m, sd * sd))
    (m1, v1), (m0, v0) = stats
    scale = np.sqrt((v1 + v0) / 2)
    if scale == 0:
        if m1 == m0:
            return 0.0
        raise ValueError("degenerate scale: zero variance in both groups with different means")
    return float(100 * abs(m1 - m0) / scale)


def standardized_difference(data: Dataset, column: str) -> float | dict[str, float]:
    """Absolute standardized difference between the groups, in percent.

    Continuous columns give one number; categorical columns give one number
    per level indicator. Values above 20 are conventionally called large.
    """
    col = data.schema.column(column)
    x = data[column]
    if col.kind == CONTINUOUS:
        return _std_diff(x, data.group, data.weight)
    return {lev: _std_diff((x == k).astype(float), data.group, data.weight)
            for k, lev in enumerate(col.levels)}
