"""Exact cells, common-support flags and the support decomposition of the raw gap.

Rows are grouped into cells by the (coarsened) levels of the blocks of a
:class:`SupportDefinition`. A row is on support when its cell carries
positive weight from both groups. The raw gap then splits exactly into the
gap among rows on support and two out-of-support terms,

    raw = raw_on_support + out_focal - out_reference,
    out_g = Pr(S=0 | G=g) * (E[Y | G=g, S=0] - E[Y | G=g, S=1]).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Dataset, ModelSpec, baseline_spec, build_design
from .linmod import FitError, fit_wls


@dataclass(frozen=True)
class SupportDefinition:
    id: str
    blocks: tuple[str, ...]

    def __post_init__(self):
        if not self.blocks:
            raise ValueError(f"support {self.id!r}: no blocks")
        if len(set(self.blocks)) != len(self.blocks):
            raise ValueError(f"support {self.id!r}: repeated block")

    def validate(self, data: Dataset) -> None:
        known = set(data.schema.block_names)
        unknown = [b for b in self.blocks if b not in known]
        if unknown:
            raise KeyError(f"support {self.id!r}: unknown block(s) {unknown}")


def nested_supports(order: Sequence[str], sizes: Sequence[int] | None = None,
                    prefix: str = "Support") -> list[SupportDefinition]:
    """Definitions enforcing the first k blocks of ``order`` for each k in ``sizes``."""
    if sizes is None:
        sizes = range(1, len(order) + 1)
    out = []
    for i, k in enumerate(sizes, start=1):
        if not 1 <= k <= len(order):
            raise ValueError(f"support size {k} outside 1..{len(order)}")
        out.append(SupportDefinition(f"{prefix} {i}", tuple(order[:k])))
    return out


@dataclass(frozen=True, eq=False)
class CellIndex:
    """Cell id per row plus per-cell row counts and weight sums by group.

    ``count[c, g]`` and ``weight[c, g]`` index cells ``c`` and group ``g``.
    """

    blocks: tuple[str, ...]
    cell: np.ndarray
    count: np.ndarray
    weight: np.ndarray

    @property
    def n_cells(self) -> int:
        return int(self.count.shape[0])

    @property
    def cell_on_support(self) -> np.ndarray:
        return (self.weight[:, 0] > 0) & (self.weight[:, 1] > 0)

    @property
    def on_support(self) -> np.ndarray:
        return self.cell_on_support[self.cell]


def build_cells(data: Dataset, blocks: SupportDefinition | Sequence[str]) -> CellIndex:
    if isinstance(blocks, SupportDefinition):
        blocks.validate(data)
        blocks = blocks.blocks
    blocks = tuple(blocks)
    cell = data.cell_codes(blocks)
    k = int(cell.max(initial=-1)) + 1
    count = np.zeros((k, 2), dtype=np.int64)
    weight = np.zeros((k, 2))
    for g in (0, 1):
        sel = data.group == g
        count[:, g] = np.bincount(cell[sel], minlength=k)
        weight[:, g] = np.bincount(cell[sel], weights=data.weight[sel], minlength=k)
    for arr in (cell, count, weight):
        arr.setflags(write=False)
    return CellIndex(blocks, cell, count, weight)


def _wmean(y: np.ndarray, w: np.ndarray) -> float:
    s = w.sum()
    return float(w @ y / s) if s > 0 else math.nan


def exact_match_delta(data: Dataset, cells: CellIndex) -> tuple[float, dict]:
    """Focal-group mean of ``Y - (reference-group cell mean of Y)`` over on-support rows.

    Off-support focal rows are excluded here; :func:`paygap.estimators.exact_match`
    refuses them instead.
    """
    g, y, w = data.group, data.outcome, data.weight
    k = cells.n_cells
    men = g == 0
    wy0 = np.bincount(cells.cell[men], weights=w[men] * y[men], minlength=k)
    w0 = cells.weight[:, 0]
    with np.errstate(invalid="ignore", divide="ignore"):
        m0 = wy0 / w0
    women = (g == 1) & cells.on_support
    if not women.any():
        return math.nan, {"n_women": 0, "n_men": 0, "thin_cells": 0}
    resid = y[women] - m0[cells.cell[women]]
    delta = _wmean(resid, w[women])
    used = cells.cell_on_support
    info = {
        "n_women": int(women.sum()),
        "n_men": int((men & cells.on_support).sum()),
        "thin_cells": int(np.sum(used & (cells.count[:, 0] == 1))),
    }
    return delta, info


@dataclass(frozen=True)
class NopoResult:
    raw: float
    raw_on_support: float
    unexplained_on_support: float
    explained_on_support: float
    out_focal: float
    out_reference: float
    share_focal: float
    share_reference: float
    defined: bool = True


def nopo_decompose(data: Dataset, cells: CellIndex) -> NopoResult:
    """Raw gap, on-support gaps and the two out-of-support components.

    On-support unexplained gap uses exact matching on the cells. With no
    on-support rows the on-support quantities are NaN and ``defined`` is False.
    """
    g, y, w = data.group, data.outcome, data.weight
    s = cells.on_support
    mean = {}
    share = {}
    out = {}
    for grp in (0, 1):
        sel = g == grp
        on, off = sel & s, sel & ~s
        mean[grp] = _wmean(y[sel], w[sel])
        share[grp] = float(w[on].sum() / w[sel].sum())
        p_off = float(w[off].sum() / w[sel].sum())
        out[grp] = p_off * (_wmean(y[off], w[off]) - _wmean(y[on], w[on])) if p_off > 0 else 0.0
        mean[(grp, 1)] = _wmean(y[on], w[on])
    raw = mean[1] - mean[0]
    if not s.any():
        return NopoResult(raw, math.nan, math.nan, math.nan, math.nan, math.nan,
                          0.0, 0.0, defined=False)
    raw_s1 = mean[(1, 1)] - mean[(0, 1)]
    delta_s1, _ = exact_match_delta(data, cells)
    return NopoResult(raw, raw_s1, delta_s1, raw_s1 - delta_s1, out[1], out[0],
                      share[1], share[0])


# -- block importance ----------------------------------------------------------

def _adj_r2_on_men(data: Dataset, spec: ModelSpec) -> float:
    men = data.group == 0
    X = build_design(data, spec).rows(men)
    fit = fit_wls(X, data.outcome[men], data.weight[men])
    adj = fit.info["adj_r2"]
    if math.isnan(adj):
        raise FitError("too few reference-group rows for the adjusted R-squared")
    return adj


def rank_variable_blocks(datasets: Dataset | Sequence[Dataset], blocks: Sequence[str] | None = None,
                         spec: ModelSpec | None = None) -> list[tuple[str, float]]:
    """Blocks sorted by the drop in adjusted R-squared of the reference-group
    wage model when the block is left out.

    With several datasets (e.g. two sectors) the drops are averaged. Ties,
    after rounding to 12 decimals, are broken alphabetically.
    """
    if isinstance(datasets, Dataset):
        datasets = [datasets]
    schema = datasets[0].schema
    if blocks is None:
        blocks = schema.block_names
    totals = {b: 0.0 for b in blocks}
    for data in datasets:
        s = spec if spec is not None else baseline_spec(data.schema)
        full = _adj_r2_on_men(data, s)
        for b in blocks:
            reduced = s.without_columns(data.schema.block(b).columns)
            totals[b] += full - _adj_r2_on_men(data, reduced)
    ranked = [(b, totals[b] / len(datasets)) for b in blocks]
    ranked.sort(key=lambda t: (-round(t[1], 12), t[0]))
    return ranked


# -- sequential analysis -------------------------------------------------------

@dataclass(frozen=True)
class SupportStep:
    step: int
    blocks: tuple[str, ...]
    n_cells: int
    decomposition: NopoResult

    @property
    def flagged(self) -> bool:
        return not self.decomposition.defined


REPORT_COLUMNS = ("step", "added_block", "n_cells", "share_focal_on_support", "raw_gap",
                  "raw_gap_on_support", "unexplained_on_support", "explained_on_support",
                  "out_of_support_focal", "out_of_support_reference", "flag")


def _num(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.10g}"


@dataclass(frozen=True)
class SupportReport:
    steps: tuple[SupportStep, ...]
    order: tuple[str, ...]
    importance: dict[str, float] = field(default_factory=dict)

    def rows(self) -> list[list[str]]:
        out = []
        for s in self.steps:
            d = s.decomposition
            out.append([str(s.step), s.blocks[-1], str(s.n_cells), _num(d.share_focal), _num(d.raw),
                        _num(d.raw_on_support), _num(d.unexplained_on_support),
                        _num(d.explained_on_support), _num(d.out_focal), _num(d.out_reference),
                        "no_support" if s.flagged else ""])
        return out

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        w.writerows(self.rows())
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    def to_text(self) -> str:
        head = f"{'k':>3}  {'block':<16}{'cells':>8}{'share':>8}{'raw':>9}{'raw|S':>9}" \
               f"{'unexpl':>9}{'expl':>9}{'out_1':>9}{'out_0':>9}"
        lines = [head, "-" * len(head)]
        for s in self.steps:
            d = s.decomposition
            vals = (d.share_focal, d.raw, d.raw_on_support, d.unexplained_on_support,
                    d.explained_on_support, d.out_focal, d.out_reference)
            lines.append(f"{s.step:>3}  {s.blocks[-1]:<16}{s.n_cells:>8}"
                         + "".join(f"{v:>9.4f}" for v in vals))
        if self.importance:
            lines.append("")
            lines.append("block importance (drop in adjusted R2 of the reference wage model):")
            for b in self.order:
                if b in self.importance:
                    lines.append(f"  {b:<16}{self.importance[b]:.6f}")
        return "\n".join(lines) + "\n"


def sequential_support_analysis(data: Dataset, ordered_blocks: Sequence[str],
                                importance: dict[str, float] | None = None) -> SupportReport:
    """Enforce support on the first k blocks for k = 1..K and decompose the gap at each step."""
    unknown = [b for b in ordered_blocks if b not in data.schema.block_names]
    if unknown:
        raise KeyError(f"unknown block(s) {unknown}")
    steps = []
    for k in range(1, len(ordered_blocks) + 1):
        blocks = tuple(ordered_blocks[:k])
        cells = build_cells(data, blocks)
        steps.append(SupportStep(k, blocks, int(cells.cell_on_support.sum()),
                                 nopo_decompose(data, cells)))
    return SupportReport(tuple(steps), tuple(ordered_blocks), dict(importance or {}))


def order_blocks(data: Dataset, order: str = "deltaR2", given: Sequence[str] | None = None,
                 seed: int = 0, spec: ModelSpec | None = None
                 ) -> tuple[list[str], dict[str, float]]:
    """Block order for the sequential analysis.

    ``deltaR2`` sorts by decreasing importance, ``increasing`` reverses it,
    ``given`` uses ``given`` verbatim and ``random`` shuffles with ``seed``.
    """
    names = list(data.schema.block_names)
    if order == "given":
        if not given:
            raise ValueError("order 'given' needs a block list")
        unknown = [b for b in given if b not in names]
        if unknown:
            raise KeyError(f"unknown block(s) {unknown}")
        return list(given), {}
    if order == "random":
        rng = np.random.default_rng(seed)
        return [names[i] for i in rng.permutation(len(names))], {}
    if order not in ("deltaR2", "increasing"):
        raise ValueError(f"unknown order {order!r}")
    ranked = rank_variable_blocks(data, names, spec)
    importance = dict(ranked)
    out = [b for b, _ in ranked]
    if order == "increasing":
        out.reverse()
    return out, importance
