"""Unexplained-gap estimators.

Every estimator returns a :class:`GapEstimate` for the focal group (G=1):
the mean difference between focal-group wages and the reference-group wage
at the same covariates. Estimators expect data already restricted to common
support (see :func:`run_grid`) and a :class:`~paygap.data.ModelSpec`.

Nuisance fits (reference-group wage model ``mu0`` and propensity score
``p``) are cached per (data, spec) in a :class:`Nuisance` so that one grid
cell fits each model once however many estimators use it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numba
import numpy as np

from .data import ML, Dataset, DesignMatrix, ModelSpec, build_design
from .lasso import LassoConfig, lasso_fitter, pds_select
from .linmod import BINOMIAL, GAUSSIAN, FitResult, fit_logit, fit_wls, predict
from .support import CellIndex, build_cells, exact_match_delta

log = logging.getLogger(__name__)

LRM, BO, IPW, AIPW, EXM, PSM, EXPSM, PDS = "LRM", "BO", "IPW", "AIPW", "EXM", "PSM", "EXPSM", "PDS"
ESTIMATORS = (LRM, BO, IPW, AIPW, EXM, PSM, EXPSM, PDS)

# Propensity scores beyond these bounds are counted as extreme in diagnostics.
EXTREME_P = 0.01


class EstimationError(ValueError):
    pass


@dataclass(frozen=True)
class EstimationConfig:
    seed: int = 0
    trim_quantile: float = 0.995
    radius_quantile: float = 0.99
    aipw_folds: int = 2
    lasso: LassoConfig = LassoConfig()
    # Blocks PSM matches on exactly before radius matching; None = least restrictive support.
    psm_exact_blocks: tuple[str, ...] | None = None

    def __post_init__(self):
        if not 0 < self.trim_quantile <= 1:
            raise ValueError("trim_quantile must be in (0, 1]")
        if not 0 < self.radius_quantile <= 1:
            raise ValueError("radius_quantile must be in (0, 1]")
        if self.aipw_folds < 1:
            raise ValueError("aipw_folds must be >= 1")


@dataclass(frozen=True)
class GapEstimate:
    estimator: str
    regime: str
    support_id: str
    delta_hat: float
    se: float = math.nan
    n_women_used: int = 0
    n_men_used: int = 0
    n_trimmed: int = 0
    n_unmatched: int = 0
    diagnostics: Mapping[str, float] = field(default_factory=dict)
    provenance: Mapping[str, object] = field(default_factory=dict)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def percent(self) -> float:
        """Gap as an exact percentage, ``100 * (exp(delta) - 1)``."""
        return 100.0 * math.expm1(self.delta_hat)


def _wmean(y, w) -> float:
    return float(w @ y / w.sum())


# -- nuisance models -------------------------------------------------------------

class Nuisance:
    """Design matrix and nuisance fits for one (dataset, spec) pair.

    Fits are keyed by a caller-chosen name for the training rows, e.g.
    ``"all"`` or ``"cf2.0"`` for the first cross-fitting half. In the ML
    regime the LASSO penalty picked for each key is recorded in
    ``selected_lambdas``; passing such a mapping as ``frozen`` reuses those
    penalties and skips cross-validation.
    """

    def __init__(self, data: Dataset, spec: ModelSpec, lasso: LassoConfig = LassoConfig(),
                 frozen: Mapping[str, float] | None = None):
        self.data = data
        self.spec = spec
        self.lasso = lasso
        self.frozen = dict(frozen or {})
        self.selected_lambdas: dict[str, float] = {}
        self._X: DesignMatrix | None = None
        self._fits: dict[tuple[str, str], FitResult] = {}
        self._pred: dict[tuple[str, str], np.ndarray] = {}
        self._pds: tuple[str, ...] | None = None

    @property
    def X(self) -> DesignMatrix:
        if self._X is None:
            self._X = build_design(self.data, self.spec)
        return self._X

    def _fitter(self, family: str, key: str) -> Callable[..., FitResult]:
        if self.spec.regime != ML:
            return fit_wls if family == GAUSSIAN else fit_logit

        def record(lam, key=key):
            self.selected_lambdas[key] = lam

        return lasso_fitter(family, self.lasso, self.frozen.get(key), record)

    def _fit(self, kind: str, key: str, rows) -> FitResult:
        k = (kind, key)
        if k not in self._fits:
            d = self.data
            train = np.ones(d.n_rows, dtype=bool) if rows is None else np.asarray(rows, dtype=bool)
            if kind == "mu0":
                sel = train & (d.group == 0)
                if sel.sum() < 2:
                    raise EstimationError("too few reference-group rows for the wage model")
                fit = self._fitter(GAUSSIAN, f"mu0/{key}")(self.X.rows(sel), d.outcome[sel],
                                                            d.weight[sel])
            else:
                g = d.group[train].astype(float)
                if not (g.any() and (g == 0).any()):
                    raise EstimationError("propensity model needs both groups")
                fit = self._fitter(BINOMIAL, f"pscore/{key}")(self.X.rows(train), g,
                                                              d.weight[train])
            self._fits[k] = fit
        return self._fits[k]

    def mu0(self, key: str = "all", rows=None) -> FitResult:
        return self._fit("mu0", key, rows)

    def pscore(self, key: str = "all", rows=None) -> FitResult:
        return self._fit("pscore", key, rows)

    def mu0_hat(self, key: str = "all", rows=None) -> np.ndarray:
        k = ("mu0", key)
        if k not in self._pred:
            self._pred[k] = predict(self.mu0(key, rows), self.X)
        return self._pred[k]

    def p_hat(self, key: str = "all", rows=None) -> np.ndarray:
        k = ("pscore", key)
        if k not in self._pred:
            self._pred[k] = predict(self.pscore(key, rows), self.X)
        return self._pred[k]

    def pds_columns(self) -> tuple[str, ...]:
        if self._pds is None:
            rec: dict[str, float] = {}
            self._pds = pds_select(self.data, self.spec, self.lasso, X=self.X,
                                   frozen=self.frozen, record=rec)
            self.selected_lambdas.update(rec)
        return self._pds


def _nuisance(data, spec, cfg: EstimationConfig, nuis: Nuisance | None) -> Nuisance:
    if nuis is None:
        return Nuisance(data, spec, cfg.lasso)
    if nuis.data is not data or nuis.spec != spec:
        raise ValueError("nuisance cache belongs to a different dataset or spec")
    return nuis


def _estimate(name, spec, delta, data, **kw) -> GapEstimate:
    return GapEstimate(name, spec.regime, kw.pop("support_id", ""), float(delta), **kw)


def _counts(data: Dataset) -> dict:
    return {"n_women_used": int((data.group == 1).sum()), "n_men_used": int((data.group == 0).sum())}


# -- regression estimators -------------------------------------------------------

def _group_coefficient(data: Dataset, X: DesignMatrix) -> tuple[float, FitResult]:
    G = DesignMatrix(data.group.astype(float)[:, None], ("__group__",))
    fit = fit_wls(G.hstack(X), data.outcome, data.weight)
    return fit.coefficients["__group__"], fit


def estimate_lrm(data: Dataset, spec: ModelSpec, cfg: EstimationConfig = EstimationConfig(),
                 nuis: Nuisance | None = None, interacted: bool = False) -> GapEstimate:
    """Coefficient on the group dummy in a weighted regression of Y on (G, X).

    With ``interacted`` the regression also includes ``G * X`` and the
    estimate is ``alpha + mean_{G=1}(X) @ beta`` with ``alpha`` the dummy
    coefficient and ``beta`` the interaction coefficients. In the ML regime
    the plain version is the post-double-selection estimator.
    """
    data.require_both_groups()
    if spec.regime == ML and not interacted:
        return estimate_pds(data, spec, cfg, nuis)
    nuis = _nuisance(data, spec, cfg, nuis)
    X = nuis.X
    if not interacted:
        delta, fit = _group_coefficient(data, X)
        return _estimate(LRM, spec, delta, data, diagnostics={"n_columns": X.n_columns,
                                                              "rank_deficient": float(bool(fit.flags))},
                         **_counts(data))
    g = data.group.astype(float)
    GX = DesignMatrix(X.values * g[:, None], tuple(f"G*{n}" for n in X.names))
    G = DesignMatrix(g[:, None], ("__group__",))
    fit = fit_wls(G.hstack(X).hstack(GX), data.outcome, data.weight)
    women = data.group == 1
    xbar = data.weight[women] @ X.values[women] / data.weight[women].sum()
    beta = np.array([fit.coefficients[n] for n in GX.names])
    delta = fit.coefficients["__group__"] + float(xbar @ beta)
    return _estimate(LRM, spec, delta, data, diagnostics={"n_columns": X.n_columns,
                                                          "interacted": 1.0}, **_counts(data))


def estimate_bo(data: Dataset, spec: ModelSpec, cfg: EstimationConfig = EstimationConfig(),
                nuis: Nuisance | None = None) -> GapEstimate:
    """Focal-group mean of ``Y - mu0(X)`` with ``mu0`` fitted on the reference group."""
    data.require_both_groups()
    nuis = _nuisance(data, spec, cfg, nuis)
    mu = nuis.mu0_hat()
    women = data.group == 1
    delta = _wmean(data.outcome[women] - mu[women], data.weight[women])
    fit = nuis.mu0()
    diag = {"n_selected": float(len(fit.selected)), "n_columns": float(nuis.X.n_columns)}
    return _estimate(BO, spec, delta, data, diagnostics=diag, **_counts(data))


def estimate_pds(data: Dataset, spec_full: ModelSpec, cfg: EstimationConfig = EstimationConfig(),
                 nuis: Nuisance | None = None) -> GapEstimate:
    """Post-double-selection: OLS of Y on G and the union of two LASSO selections."""
    data.require_both_groups()
    nuis = _nuisance(data, spec_full, cfg, nuis)
    cols = nuis.pds_columns()
    delta, _ = _group_coefficient(data, nuis.X.select(cols))
    diag = {"n_selected": float(len(cols)), "n_columns": float(nuis.X.n_columns)}
    return _estimate(PDS, spec_full, delta, data, diagnostics=diag, **_counts(data))


# -- reweighting -----------------------------------------------------------------

def weighted_quantile(x: np.ndarray, w: np.ndarray, q: float) -> float:
    """Smallest value whose weighted CDF reaches ``q`` (inverted-CDF rule)."""
    return float(np.quantile(x, q, weights=w, method="inverted_cdf"))


def odds_weights(p: np.ndarray, group: np.ndarray, weight: np.ndarray,
                 trim_quantile: float = 0.995) -> tuple[np.ndarray, np.ndarray, float]:
    """Normalised reference-group weights ``W0`` reweighting men to the women's covariates.

    Men's odds ``p / (1 - p)`` above the weighted ``trim_quantile`` of the
    men's odds distribution are dropped, then the remaining weights
    ``odds * weight`` are normalised to sum to one. Returns ``(W0, trimmed,
    threshold)`` with ``W0`` zero for women and trimmed men.
    """
    men = group == 0
    if not men.any():
        raise EstimationError("no reference-group rows to reweight")
    odds = p / (1.0 - p)
    threshold = math.inf
    trimmed = np.zeros(p.shape[0], dtype=bool)
    if trim_quantile < 1:
        threshold = weighted_quantile(odds[men], weight[men], trim_quantile)
        trimmed = men & (odds > threshold)
    keep = men & ~trimmed
    raw = np.where(keep, odds * weight, 0.0)
    total = raw.sum()
    if not (total > 0 and np.isfinite(total)):
        raise EstimationError("degenerate propensity scores: reweighting mass is not positive")
    return raw / total, trimmed, threshold


def _p_diagnostics(p: np.ndarray) -> dict[str, float]:
    return {"p_min": float(p.min()), "p_max": float(p.max()),
            "n_extreme_p": float(np.sum((p < EXTREME_P) | (p > 1 - EXTREME_P)))}


def estimate_ipw(data: Dataset, spec: ModelSpec, cfg: EstimationConfig = EstimationConfig(),
                 nuis: Nuisance | None = None) -> GapEstimate:
    """Focal-group mean of Y minus the propensity-reweighted reference-group mean."""
    data.require_both_groups()
    nuis = _nuisance(data, spec, cfg, nuis)
    p = nuis.p_hat()
    W0, trimmed, thr = odds_weights(p, data.group, data.weight, cfg.trim_quantile)
    women = data.group == 1
    delta = _wmean(data.outcome[women], data.weight[women]) - float(W0 @ data.outcome)
    diag = {**_p_diagnostics(p), "trim_threshold": thr, "weight_sum": float(W0.sum()),
            "n_selected": float(len(nuis.pscore().selected))}
    n_tr = int(trimmed.sum())
    return _estimate(IPW, spec, delta, data, n_women_used=int(women.sum()),
                     n_men_used=int((data.group == 0).sum()) - n_tr, n_trimmed=n_tr,
                     diagnostics=diag)


def cross_fit_folds(n: int, folds: int, seed: int) -> np.ndarray:
    """Seeded assignment of rows to ``folds`` parts of (nearly) equal size."""
    fold = np.empty(n, dtype=np.int64)
    fold[np.random.default_rng(seed).permutation(n)] = np.arange(n) % folds
    return fold


def aipw_from_nuisances(y, group, weight, mu, p, trim_quantile: float = 0.995
                        ) -> tuple[float, float, int]:
    """Doubly robust estimate from given nuisance predictions.

    Returns ``(delta, correction, n_trimmed)`` where ``delta`` is the BO-type
    term minus ``correction``, the reweighted reference-group residual mean.
    """
    W0, trimmed, _ = odds_weights(p, group, weight, trim_quantile)
    women = group == 1
    r = y - mu
    bo = _wmean(r[women], weight[women])
    corr = float(W0 @ r)
    return bo - corr, corr, int(trimmed.sum())


def estimate_aipw(data: Dataset, spec: ModelSpec, cfg: EstimationConfig = EstimationConfig(),
                  nuis: Nuisance | None = None) -> GapEstimate:
    """Doubly robust estimator with ``cfg.aipw_folds``-fold cross-fitting.

    Nuisances are fitted on all parts but one and evaluated on the held-out
    part (trimming included); the reported value is the simple average over
    parts. ``aipw_folds=1`` fits and evaluates on the full sample.
    """
    data.require_both_groups()
    nuis = _nuisance(data, spec, cfg, nuis)
    K = cfg.aipw_folds
    y, g, w = data.outcome, data.group, data.weight
    if K == 1:
        parts = [(None, np.ones(data.n_rows, dtype=bool), "all")]
    else:
        fold = cross_fit_folds(data.n_rows, K, cfg.seed)
        parts = [(fold != k, fold == k, f"cf{K}.{k}") for k in range(K)]
    deltas, corrs = [], []
    n_trimmed = 0
    for train, ev, key in parts:
        if not ((g[ev] == 1).any() and (g[ev] == 0).any()):
            raise EstimationError("a cross-fitting part lacks one of the groups")
        mu = nuis.mu0_hat(key, train)
        p = nuis.p_hat(key, train)
        d, c, t = aipw_from_nuisances(y[ev], g[ev], w[ev], mu[ev], p[ev], cfg.trim_quantile)
        deltas.append(d)
        corrs.append(c)
        n_trimmed += t
    diag = {"correction": float(np.mean(corrs)), "folds": float(K)}
    for k, d in enumerate(deltas):
        diag[f"delta_part{k}"] = d
    return _estimate(AIPW, spec, float(np.mean(deltas)), data, n_women_used=int((g == 1).sum()),
                     n_men_used=int((g == 0).sum()), n_trimmed=n_trimmed, diagnostics=diag)


# -- matching --------------------------------------------------------------------

def exact_match(data: Dataset, cells: CellIndex | Sequence[str]) -> GapEstimate:
    """Focal-group mean of ``Y`` minus the reference-group mean of its cell.

    Raises :class:`EstimationError` if a focal-group row lies in a cell
    without reference-group weight.
    """
    data.require_both_groups()
    if not isinstance(cells, CellIndex):
        cells = build_cells(data, cells)
    if cells.cell.shape[0] != data.n_rows:
        raise ValueError("cell index does not belong to this dataset")
    off = (data.group == 1) & ~cells.on_support
    if off.any():
        raise EstimationError(f"exact matching cannot extrapolate: {int(off.sum())} focal-group "
                              "row(s) in cells without reference-group rows")
    delta, info = exact_match_delta(data, cells)
    return GapEstimate(EXM, "", "", delta, n_women_used=info["n_women"], n_men_used=info["n_men"],
                       diagnostics={"n_cells": float(cells.cell_on_support.sum()),
                                    "thin_cells": float(info["thin_cells"])})


@numba.njit(cache=True, nogil=True)
def _radius_ranges(mp, start, end, wp, radius):
    """Index range [lo, hi) of reference rows with |p_j - p_i| <= radius within each cell."""
    nw = wp.shape[0]
    lo_out = np.zeros(nw, dtype=np.int64)
    hi_out = np.zeros(nw, dtype=np.int64)
    for i in range(nw):
        s, e = start[i], end[i]
        x = wp[i]
        # first j with (mp[j] >= x or x - mp[j] <= radius)
        lo, hi = s, e
        while lo < hi:
            mid = (lo + hi) // 2
            if mp[mid] >= x or x - mp[mid] <= radius:
                hi = mid
            else:
                lo = mid + 1
        a = lo
        # first j with (mp[j] > x and mp[j] - x > radius)
        lo, hi = a, e
        while lo < hi:
            mid = (lo + hi) // 2
            if mp[mid] > x and mp[mid] - x > radius:
                hi = mid
            else:
                lo = mid + 1
        lo_out[i] = a
        hi_out[i] = lo
    return lo_out, hi_out


@numba.njit(cache=True, nogil=True)
def _closest_distance(mp, start, end, wp):
    nw = wp.shape[0]
    closest = np.full(nw, np.inf)
    for i in range(nw):
        s, e = start[i], end[i]
        if s == e:
            continue
        x = wp[i]
        lo, hi = s, e
        while lo < hi:
            mid = (lo + hi) // 2
            if mp[mid] < x:
                lo = mid + 1
            else:
                hi = mid
        best = np.inf
        if lo < e:
            best = mp[lo] - x
        if lo > s:
            d = x - mp[lo - 1]
            if d < best:
                best = d
        closest[i] = best
    return closest


@numba.njit(cache=True, nogil=True)
def _cell_prefix(mc, v):
    """Inclusive prefix sums of ``v`` restarting at every change of ``mc``."""
    out = np.empty(v.shape[0])
    acc = 0.0
    for j in range(v.shape[0]):
        if j > 0 and mc[j] != mc[j - 1]:
            acc = 0.0
        acc += v[j]
        out[j] = acc
    return out


@dataclass(frozen=True)
class MatchResult:
    delta: float
    radius: float
    n_women_used: int
    n_men_used: int
    n_unmatched: int


def radius_match(cell: np.ndarray, p: np.ndarray, group: np.ndarray, y: np.ndarray,
                 w: np.ndarray, radius_quantile: float = 0.99, radius: float | None = None
                 ) -> MatchResult:
    """Propensity-score radius matching within exact cells.

    The radius defaults to the weighted ``radius_quantile`` of each focal
    row's closest distance to a reference row of its cell. Every focal row is
    compared with the weighted mean outcome of all reference rows of its cell
    within the radius; focal rows without such a match are dropped.
    """
    men = np.flatnonzero(group == 0)
    women = np.flatnonzero(group == 1)
    order = np.lexsort((p[men], cell[men]))
    m = men[order]
    mc, mp, my, mw = cell[m], p[m], y[m], w[m]
    wc, wp = cell[women], p[women]
    start = np.searchsorted(mc, wc, side="left")
    end = np.searchsorted(mc, wc, side="right")
    if radius is None:
        closest = _closest_distance(mp, start, end, wp)
        finite = np.isfinite(closest)
        if not finite.any():
            raise EstimationError("no focal-group row has a reference row in its cell")
        radius = weighted_quantile(closest[finite], w[women][finite], radius_quantile)
    lo, hi = _radius_ranges(mp, start, end, wp, radius)
    matched = hi > lo
    if not matched.any():
        raise EstimationError("radius matching found no matches")
    # Centre outcomes per cell before accumulating to limit cancellation.
    ncell = int(cell.max()) + 1
    cw = np.bincount(mc, weights=mw, minlength=ncell)
    cwy = np.bincount(mc, weights=mw * my, minlength=ncell)
    with np.errstate(invalid="ignore", divide="ignore"):
        cmean = cwy / cw
    yc = my - cmean[mc]
    pw = _cell_prefix(mc, mw)
    pwy = _cell_prefix(mc, mw * yc)
    li, hi_m = lo[matched], hi[matched]
    first = li == start[matched]
    sw = pw[hi_m - 1] - np.where(first, 0.0, pw[np.maximum(li - 1, 0)])
    swy = pwy[hi_m - 1] - np.where(first, 0.0, pwy[np.maximum(li - 1, 0)])
    counterfactual = cmean[wc[matched]] + swy / sw
    wi = w[women][matched]
    delta = float(wi @ (y[women][matched] - counterfactual) / wi.sum())
    nm = m.shape[0] + 1
    cover = np.bincount(li, minlength=nm) - np.bincount(hi_m, minlength=nm)
    n_men = int(np.sum(np.cumsum(cover[:-1]) > 0))
    return MatchResult(delta, float(radius), int(matched.sum()), n_men,
                       int((~matched).sum()))


def _psm_estimate(name, data, spec, nuis, cell, cfg) -> GapEstimate:
    p = nuis.p_hat()
    res = radius_match(cell, p, data.group, data.outcome, data.weight, cfg.radius_quantile)
    diag = {**_p_diagnostics(p), "radius": res.radius,
            "degenerate_propensity": float(np.ptp(p) == 0),
            "n_selected": float(len(nuis.pscore().selected))}
    return _estimate(name, spec, res.delta, data, n_women_used=res.n_women_used,
                     n_men_used=res.n_men_used, n_unmatched=res.n_unmatched, diagnostics=diag)


def estimate_psm(data: Dataset, spec: ModelSpec, cfg: EstimationConfig = EstimationConfig(),
                 nuis: Nuisance | None = None, exact_blocks: Sequence[str] | None = None
                 ) -> GapEstimate:
    """Radius matching on the propensity score after exact matching on ``exact_blocks``.

    ``exact_blocks`` defaults to ``cfg.psm_exact_blocks``; empty means pure
    propensity-score matching.
    """
    data.require_both_groups()
    nuis = _nuisance(data, spec, cfg, nuis)
    blocks = exact_blocks if exact_blocks is not None else (cfg.psm_exact_blocks or ())
    cell = data.cell_codes(tuple(blocks))
    return _psm_estimate(PSM, data, spec, nuis, cell, cfg)


def estimate_expsm(data: Dataset, cells: CellIndex | Sequence[str], spec: ModelSpec,
                   cfg: EstimationConfig = EstimationConfig(), nuis: Nuisance | None = None
                   ) -> GapEstimate:
    """Radius matching within the exact cells of the active support definition.

    One radius is used for all cells, from the pooled closest distances.
    """
    data.require_both_groups()
    nuis = _nuisance(data, spec, cfg, nuis)
    if not isinstance(cells, CellIndex):
        cells = build_cells(data, cells)
    if cells.cell.shape[0] != data.n_rows:
        raise ValueError("cell index does not belong to this dataset")
    est = _psm_estimate(EXPSM, data, spec, nuis, cells.cell, cfg)
    return replace(est, diagnostics={**est.diagnostics, "global_radius": 1.0})
