"""Synthetic wage data with known population gaps.

Data are generated group-first: ``G ~ Bernoulli(share_women)``, then the
covariates are drawn from group-specific laws, then

    Y = mu0(X) + G * gap(X) + noise.

Categorical covariates have per-group level probabilities (a level with
reference-group probability 0 is outside common support). Continuous
covariates are normal with group-specific mean and sd, optionally shifted
by the level of a categorical column; they enter ``mu0`` through a
polynomial and through bin effects, and ``gap`` through bin effects only.

Because the gap depends on continuous covariates only through bins, every
population quantity (raw, explained and unexplained gap, support shares and
gaps on support) is an exact finite sum over categorical cells of normal
moments and normal CDF differences. No quantity in :class:`Truth` is
estimated from the sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import ndtr

from .data import (CATEGORICAL, CONTINUOUS, Column, Dataset, Schema, VariableBlock,
                   save_dataset)
from .kv import format_kv, parse_kv, split_list

UNIT, LOGNORMAL, STRATIFIED = "unit", "lognormal", "stratified"
MAX_CELLS = 2_000_000


class DgpError(ValueError):
    pass


@dataclass(frozen=True)
class CategoricalVar:
    name: str
    levels: tuple[str, ...]
    p_women: tuple[float, ...]
    p_men: tuple[float, ...]
    wage: tuple[float, ...]
    gap: tuple[float, ...] = ()          # per-level gap contribution; empty = none
    coarsen: Mapping[str, str] | None = None


@dataclass(frozen=True)
class ContinuousVar:
    name: str
    mean_women: float
    mean_men: float
    sd_women: float = 1.0
    sd_men: float = 1.0
    center: float = 0.0
    scale: float = 1.0
    poly: tuple[float, ...] = ()          # wage coefficients on z, z^2, ... with z = (x - center) / scale
    cuts: tuple[float, ...] = ()
    bin_wage: tuple[float, ...] = ()      # one per bin (len(cuts) + 1)
    bin_gap: tuple[float, ...] = ()
    shift_by: str | None = None           # categorical whose level shifts the mean
    shift: tuple[float, ...] = ()


@dataclass(frozen=True)
class WageInteraction:
    a: str
    b: str
    table: tuple[tuple[float, ...], ...]   # table[level of a][level of b]


@dataclass(frozen=True)
class JointTilt:
    """Makes two categoricals dependent within one group:
    ``P(a=i, b=j | G=g)`` proportional to ``P(a=i|g) P(b=j|g) factor[i][j]``."""

    group: int
    a: str
    b: str
    factor: tuple[tuple[float, ...], ...]


@dataclass(frozen=True)
class DgpConfig:
    n: int
    seed: int = 0
    share_women: float = 0.5
    categoricals: tuple[CategoricalVar, ...] = ()
    continuous: tuple[ContinuousVar, ...] = ()
    interactions: tuple[WageInteraction, ...] = ()
    tilts: tuple[JointTilt, ...] = ()
    intercept: float = 0.0
    gap: float = 0.0                      # homogeneous part of the gap
    noise_sd: float = 0.3
    weights: str = UNIT
    weight_sd: float = 0.5                # lognormal weights
    strata_column: str | None = None      # stratified weights: inclusion prob by level
    strata_prob: tuple[float, ...] = ()
    blocks: tuple[tuple[str, tuple[str, ...]], ...] = ()   # default: one block per covariate

    def categorical(self, name: str) -> CategoricalVar:
        for c in self.categoricals:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.categoricals) + tuple(c.name for c in self.continuous)

    def block_list(self) -> tuple[tuple[str, tuple[str, ...]], ...]:
        return self.blocks or tuple((v, (v,)) for v in self.names)


# -- validation ------------------------------------------------------------------

def _check_probs(name, p, k):
    p = np.asarray(p, dtype=float)
    if p.shape != (k,):
        raise DgpError(f"{name}: expected {k} probabilities, got {p.shape[0]}")
    if np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
        raise DgpError(f"{name}: probabilities must be non-negative and sum to 1")


def validate(cfg: DgpConfig) -> None:
    if cfg.n < 1:
        raise DgpError("n must be positive")
    if not 0 < cfg.share_women < 1:
        raise DgpError("share_women must be in (0, 1)")
    if cfg.noise_sd < 0:
        raise DgpError("noise_sd must be non-negative")
    names = cfg.names
    if len(set(names)) != len(names):
        raise DgpError("duplicate covariate names")
    cats = {c.name: c for c in cfg.categoricals}
    for c in cfg.categoricals:
        k = len(c.levels)
        _check_probs(f"{c.name}.p_women", c.p_women, k)
        _check_probs(f"{c.name}.p_men", c.p_men, k)
        if len(c.wage) != k or (c.gap and len(c.gap) != k):
            raise DgpError(f"{c.name}: wage/gap tables need one entry per level")
        if any(pw == 0 and pm == 0 for pw, pm in zip(c.p_women, c.p_men)):
            raise DgpError(f"{c.name}: a level has probability 0 in both groups")
        if c.coarsen is not None and set(c.coarsen) != set(c.levels):
            raise DgpError(f"{c.name}: coarsening must map every level")
    for v in cfg.continuous:
        if v.sd_women <= 0 or v.sd_men <= 0 or v.scale <= 0:
            raise DgpError(f"{v.name}: standard deviations and scale must be positive")
        nb = len(v.cuts) + 1
        if list(v.cuts) != sorted(v.cuts):
            raise DgpError(f"{v.name}: cuts must be increasing")
        for t, label in ((v.bin_wage, "bin_wage"), (v.bin_gap, "bin_gap")):
            if t and len(t) != nb:
                raise DgpError(f"{v.name}.{label}: expected {nb} entries")
        if v.shift_by is not None:
            if v.shift_by not in cats or len(v.shift) != len(cats[v.shift_by].levels):
                raise DgpError(f"{v.name}: shift_by must name a categorical, one shift per level")
    for it in cfg.interactions:
        if it.a not in cats or it.b not in cats:
            raise DgpError("wage interactions need two categoricals")
        t = np.asarray(it.table, dtype=float)
        if t.shape != (len(cats[it.a].levels), len(cats[it.b].levels)):
            raise DgpError(f"interaction {it.a}x{it.b}: table has wrong shape")
    used = set()
    for tl in cfg.tilts:
        if tl.a not in cats or tl.b not in cats or tl.a == tl.b:
            raise DgpError("tilts need two distinct categoricals")
        if (tl.a in used or tl.b in used):
            raise DgpError("a categorical may appear in at most one tilt")
        used.update((tl.a, tl.b))
        f = np.asarray(tl.factor, dtype=float)
        if f.shape != (len(cats[tl.a].levels), len(cats[tl.b].levels)) or np.any(f <= 0):
            raise DgpError(f"tilt {tl.a}x{tl.b}: factor table has wrong shape or non-positive entries")
        if tl.group not in (0, 1):
            raise DgpError("tilt group must be 0 or 1")
    if cfg.weights not in (UNIT, LOGNORMAL, STRATIFIED):
        raise DgpError(f"unknown weight scheme {cfg.weights!r}")
    if cfg.weights == STRATIFIED:
        if cfg.strata_column not in cats:
            raise DgpError("stratified weights need strata_column naming a categorical")
        pr = np.asarray(cfg.strata_prob, dtype=float)
        if pr.shape != (len(cats[cfg.strata_column].levels),) or np.any(pr <= 0) or np.any(pr > 1):
            raise DgpError("strata_prob needs one inclusion probability in (0, 1] per level")
    for bname, cols in cfg.blocks:
        for c in cols:
            if c not in names:
                raise DgpError(f"block {bname!r}: unknown column {c!r}")


# -- categorical laws ------------------------------------------------------------

def _components(cfg: DgpConfig) -> list[tuple[tuple[str, ...], list[np.ndarray]]]:
    """Independent components of the categorical law: single columns or tilted pairs.

    Each component carries, per group, a probability array over its joint levels.
    """
    tilted = {}
    for tl in cfg.tilts:
        tilted[tl.a] = tl
        tilted[tl.b] = tl
    comps = []
    done = set()
    for c in cfg.categoricals:
        if c.name in done:
            continue
        if c.name in tilted:
            tl = tilted[c.name]
            a, b = cfg.categorical(tl.a), cfg.categorical(tl.b)
            probs = []
            for g in (0, 1):
                pa = np.asarray(a.p_women if g else a.p_men)
                pb = np.asarray(b.p_women if g else b.p_men)
                joint = np.outer(pa, pb)
                if tl.group == g:
                    joint = joint * np.asarray(tl.factor)
                    joint /= joint.sum()
                probs.append(joint)
            comps.append(((a.name, b.name), probs))
            done.update((a.name, b.name))
        else:
            comps.append(((c.name,), [np.asarray(c.p_men, float), np.asarray(c.p_women, float)]))
            done.add(c.name)
    return comps


def _cells(cfg: DgpConfig):
    """All categorical cells with their per-group probabilities.

    Returns ``(codes, p0, p1)``; ``codes[name]`` holds the level of each cell.
    """
    comps = _components(cfg)
    size = 1
    for _, probs in comps:
        size *= probs[0].size
    if size > MAX_CELLS:
        raise DgpError(f"{size} categorical cells exceed the enumeration limit")
    codes = {}
    p = [np.ones(1), np.ones(1)]
    for names, probs in comps:
        k = probs[0].size
        for g in (0, 1):
            p[g] = np.outer(p[g], probs[g].reshape(-1)).reshape(-1)
        flat = np.arange(k)
        if len(names) == 1:
            levels = [flat]
        else:
            nb = probs[0].shape[1]
            levels = [flat // nb, flat % nb]
        for nm in list(codes):
            codes[nm] = np.repeat(codes[nm], k)
        reps = p[0].size // k
        for nm, lv in zip(names, levels):
            codes[nm] = np.tile(lv, reps)
    if not cfg.categoricals:
        return {}, np.ones(1), np.ones(1)
    return codes, p[0], p[1]


def _normal_moments(m: np.ndarray, s: float, k: int) -> list[np.ndarray]:
    """Raw moments E[Z^j], j = 0..k, of N(m, s^2) (elementwise in m)."""
    out = [np.ones_like(m), m.copy()]
    for j in range(2, k + 1):
        out.append(m * out[j - 1] + (j - 1) * s * s * out[j - 2])
    return out[: k + 1]


def _bin_probs(m: np.ndarray, s: float, cuts: Sequence[float]) -> np.ndarray:
    edges = np.concatenate([[-np.inf], np.asarray(cuts, float), [np.inf]])
    cdf = ndtr((edges[None, :] - m[:, None]) / s)
    return np.diff(cdf, axis=1)


def _cell_expectations(cfg: DgpConfig, codes: Mapping[str, np.ndarray], ncell: int, g: int
                       ) -> tuple[np.ndarray, np.ndarray]:
    """E[mu0 | cell, G=g] and E[gap | cell, G=g] for every categorical cell."""
    mu = np.full(ncell, cfg.intercept, dtype=float)
    gap = np.full(ncell, cfg.gap, dtype=float)
    for c in cfg.categoricals:
        mu += np.asarray(c.wage)[codes[c.name]]
        if c.gap:
            gap += np.asarray(c.gap)[codes[c.name]]
    for it in cfg.interactions:
        mu += np.asarray(it.table)[codes[it.a], codes[it.b]]
    for v in cfg.continuous:
        mean = np.full(ncell, v.mean_women if g else v.mean_men)
        if v.shift_by is not None:
            mean = mean + np.asarray(v.shift)[codes[v.shift_by]]
        sd = v.sd_women if g else v.sd_men
        if v.poly:
            mom = _normal_moments((mean - v.center) / v.scale, sd / v.scale, len(v.poly))
            for j, coef in enumerate(v.poly, start=1):
                mu += coef * mom[j]
        if v.bin_wage or v.bin_gap:
            bp = _bin_probs(mean, sd, v.cuts)
            if v.bin_wage:
                mu += bp @ np.asarray(v.bin_wage)
            if v.bin_gap:
                gap += bp @ np.asarray(v.bin_gap)
    return mu, gap


# -- truth -----------------------------------------------------------------------

@dataclass(frozen=True)
class SupportTruth:
    columns: tuple[str, ...]
    share_women: float
    raw: float
    unexplained: float
    explained: float
    out_women: float
    out_men: float


@dataclass(frozen=True)
class Truth:
    raw: float
    unexplained: float
    explained: float
    support_share: float               # women on population support of all categoricals
    raw_on_support: float
    unexplained_on_support: float
    steps: tuple[SupportTruth, ...] = ()


def _population(cfg: DgpConfig):
    codes, p0, p1 = _cells(cfg)
    ncell = p0.size
    mu0_men, _ = _cell_expectations(cfg, codes, ncell, 0)
    mu0_women, gap_women = _cell_expectations(cfg, codes, ncell, 1)
    return codes, p0, p1, mu0_men, mu0_women, gap_women


def support_truth(cfg: DgpConfig, columns: Sequence[str], _pop=None) -> SupportTruth:
    """Population shares and gaps when support is enforced on ``columns``.

    Only categorical columns can cause a lack of population support;
    continuous columns have positive density in every bin for both groups.
    """
    codes, p0, p1, m0, m1, g1 = _pop or _population(cfg)
    cats = [c for c in columns if c in codes]
    if cats:
        key = np.zeros(p0.size, dtype=np.int64)
        for c in cats:
            key = key * len(cfg.categorical(c).levels) + codes[c]
        _, inv = np.unique(key, return_inverse=True)
        men_mass = np.bincount(inv, weights=p0)
        women_mass = np.bincount(inv, weights=p1)
        on = ((men_mass > 1e-300) & (women_mass > 1e-300))[inv]
    else:
        on = np.ones(p0.size, dtype=bool)
    s1, s0 = p1[on].sum(), p0[on].sum()
    if s1 <= 0 or s0 <= 0:
        nan = math.nan
        return SupportTruth(tuple(columns), float(s1), nan, nan, nan, nan, nan)
    ey1_on = (p1[on] @ (m1[on] + g1[on])) / s1
    ey0_on = (p0[on] @ m0[on]) / s0
    delta_on = (p1[on] @ g1[on]) / s1
    raw_on = ey1_on - ey0_on
    out1 = (1 - s1) * (((p1[~on] @ (m1[~on] + g1[~on])) / (1 - s1)) - ey1_on) if s1 < 1 else 0.0
    out0 = (1 - s0) * (((p0[~on] @ m0[~on]) / (1 - s0)) - ey0_on) if s0 < 1 else 0.0
    return SupportTruth(tuple(columns), float(s1), float(raw_on), float(delta_on),
                        float(raw_on - delta_on), float(out1), float(out0))


def truth(cfg: DgpConfig) -> Truth:
    """Closed-form population gaps for ``cfg`` (independent of ``n`` and ``seed``)."""
    validate(cfg)
    pop = _population(cfg)
    _, p0, p1, m0, m1, g1 = pop
    delta = float(p1 @ g1)
    raw = float(p1 @ (m1 + g1) - p0 @ m0)
    steps = []
    cols: list[str] = []
    for _, bcols in cfg.block_list():
        cols.extend(bcols)
        steps.append(support_truth(cfg, tuple(cols), pop))
    full = support_truth(cfg, [c.name for c in cfg.categoricals], pop)
    return Truth(raw, delta, raw - delta, full.share_women, full.raw, full.unexplained, tuple(steps))


# -- sampling --------------------------------------------------------------------

def _draw_population(cfg: DgpConfig, n: int, rng: np.random.Generator):
    g = (rng.random(n) < cfg.share_women).astype(np.int8)
    cov: dict[str, np.ndarray] = {}
    for names, probs in _components(cfg):
        code = np.empty(n, dtype=np.int64)
        for grp in (0, 1):
            sel = g == grp
            cdf = np.cumsum(probs[grp].reshape(-1))
            cdf[-1] = 1.0
            code[sel] = np.searchsorted(cdf, rng.random(int(sel.sum())), side="right")
        if len(names) == 1:
            cov[names[0]] = code
        else:
            nb = probs[0].shape[1]
            cov[names[0]], cov[names[1]] = code // nb, code % nb
    for v in cfg.continuous:
        mean = np.where(g == 1, v.mean_women, v.mean_men).astype(float)
        if v.shift_by is not None:
            mean = mean + np.asarray(v.shift)[cov[v.shift_by]]
        sd = np.where(g == 1, v.sd_women, v.sd_men)
        cov[v.name] = mean + sd * rng.standard_normal(n)
    return g, cov


def mu0_of(cfg: DgpConfig, cov: Mapping[str, np.ndarray]) -> np.ndarray:
    n = next(iter(cov.values())).shape[0] if cov else 0
    mu = np.full(n, cfg.intercept)
    for c in cfg.categoricals:
        mu += np.asarray(c.wage)[cov[c.name]]
    for it in cfg.interactions:
        mu += np.asarray(it.table)[cov[it.a], cov[it.b]]
    for v in cfg.continuous:
        z = (cov[v.name] - v.center) / v.scale
        for j, coef in enumerate(v.poly, start=1):
            mu += coef * z ** j
        if v.bin_wage:
            mu += np.asarray(v.bin_wage)[np.searchsorted(v.cuts, cov[v.name], side="right")]
    return mu


def gap_of(cfg: DgpConfig, cov: Mapping[str, np.ndarray]) -> np.ndarray:
    n = next(iter(cov.values())).shape[0] if cov else 0
    gap = np.full(n, cfg.gap)
    for c in cfg.categoricals:
        if c.gap:
            gap += np.asarray(c.gap)[cov[c.name]]
    for v in cfg.continuous:
        if v.bin_gap:
            gap += np.asarray(v.bin_gap)[np.searchsorted(v.cuts, cov[v.name], side="right")]
    return gap


def _schema(cfg: DgpConfig) -> Schema:
    cols = [Column(c.name, CATEGORICAL, c.levels) for c in cfg.categoricals]
    cols += [Column(v.name, CONTINUOUS) for v in cfg.continuous]
    coarse = {}
    for c in cfg.categoricals:
        if c.coarsen is not None:
            coarse[c.name] = dict(c.coarsen)
    for v in cfg.continuous:
        coarse[v.name] = tuple(float(x) for x in v.cuts)
    blocks = tuple(VariableBlock(name, tuple(bcols), {c: coarse[c] for c in bcols if c in coarse})
                   for name, bcols in cfg.block_list())
    return Schema("g", "y", tuple(cols), weight="w", blocks=blocks)


def generate(cfg: DgpConfig) -> tuple[Dataset, Truth]:
    """Seeded draw of ``cfg.n`` rows and the population truth."""
    validate(cfg)
    rng = np.random.default_rng(cfg.seed)
    if cfg.weights == STRATIFIED:
        pi = np.asarray(cfg.strata_prob, dtype=float)
        gs, covs, got = [], [], 0
        while got < cfg.n:
            m = max(1024, int(1.2 * (cfg.n - got) / pi.min()))
            g, cov = _draw_population(cfg, m, rng)
            keep = rng.random(m) < pi[cov[cfg.strata_column]]
            gs.append(g[keep])
            covs.append({k: v[keep] for k, v in cov.items()})
            got += int(keep.sum())
        g = np.concatenate(gs)[: cfg.n]
        cov = {k: np.concatenate([c[k] for c in covs])[: cfg.n] for k in covs[0]}
        w = 1.0 / pi[cov[cfg.strata_column]]
    else:
        g, cov = _draw_population(cfg, cfg.n, rng)
        if cfg.weights == LOGNORMAL:
            w = np.exp(cfg.weight_sd * rng.standard_normal(cfg.n))
        else:
            w = np.ones(cfg.n)
    y = mu0_of(cfg, cov) + g * gap_of(cfg, cov) + cfg.noise_sd * rng.standard_normal(cfg.n)
    data = Dataset(g, y, w, cov, _schema(cfg))
    return data, truth(cfg)


def true_mu0(cfg: DgpConfig, data: Dataset) -> np.ndarray:
    """Reference-group conditional mean E[Y | G=0, X] at every row."""
    return mu0_of(cfg, data.covariates)


def true_gap(cfg: DgpConfig, data: Dataset) -> np.ndarray:
    return gap_of(cfg, data.covariates)


def true_propensity(cfg: DgpConfig, data: Dataset) -> np.ndarray:
    """P(G=1 | X) at every row, from the group-specific covariate laws."""
    n = data.n_rows
    logf = [np.zeros(n), np.zeros(n)]
    for names, probs in _components(cfg):
        if len(names) == 1:
            idx = data[names[0]]
            for g in (0, 1):
                with np.errstate(divide="ignore"):
                    logf[g] += np.log(probs[g][idx])
        else:
            a, b = data[names[0]], data[names[1]]
            for g in (0, 1):
                with np.errstate(divide="ignore"):
                    logf[g] += np.log(probs[g][a, b])
    for v in cfg.continuous:
        x = data[v.name]
        for g, (m, s) in enumerate(((v.mean_men, v.sd_men), (v.mean_women, v.sd_women))):
            mean = np.full(n, m)
            if v.shift_by is not None:
                mean = mean + np.asarray(v.shift)[data[v.shift_by]]
            logf[g] += -0.5 * ((x - mean) / s) ** 2 - math.log(s)
    a = math.log(cfg.share_women) + logf[1]
    b = math.log(1 - cfg.share_women) + logf[0]
    with np.errstate(invalid="ignore"):
        return 1.0 / (1.0 + np.exp(np.clip(b - a, -700, 700)))


# -- serialisation ---------------------------------------------------------------

def _tup(x) -> str:
    return ",".join(repr(float(v)) for v in x)


def _tab(t) -> str:
    return ";".join(_tup(r) for r in t)


def config_to_kv(cfg: DgpConfig) -> dict[str, str]:
    """Flat ``key = value`` form of ``cfg``; :func:`config_from_kv` inverts it."""
    out = {"dgp.n": str(cfg.n), "dgp.seed": str(cfg.seed), "dgp.share_women": repr(cfg.share_women),
           "dgp.intercept": repr(cfg.intercept), "dgp.gap": repr(cfg.gap),
           "dgp.noise_sd": repr(cfg.noise_sd), "dgp.weights": cfg.weights,
           "dgp.weight_sd": repr(cfg.weight_sd)}
    if cfg.strata_column:
        out["dgp.strata_column"] = cfg.strata_column
        out["dgp.strata_prob"] = _tup(cfg.strata_prob)
    for c in cfg.categoricals:
        p = f"cat.{c.name}."
        out[p + "levels"] = ",".join(c.levels)
        out[p + "p_women"] = _tup(c.p_women)
        out[p + "p_men"] = _tup(c.p_men)
        out[p + "wage"] = _tup(c.wage)
        if c.gap:
            out[p + "gap"] = _tup(c.gap)
        if c.coarsen is not None:
            out[p + "coarsen"] = ",".join(f"{k}:{v}" for k, v in c.coarsen.items())
    for v in cfg.continuous:
        p = f"cont.{v.name}."
        for key in ("mean_women", "mean_men", "sd_women", "sd_men", "center", "scale"):
            out[p + key] = repr(float(getattr(v, key)))
        for key in ("poly", "cuts", "bin_wage", "bin_gap", "shift"):
            if getattr(v, key):
                out[p + key] = _tup(getattr(v, key))
        if v.shift_by:
            out[p + "shift_by"] = v.shift_by
    for i, it in enumerate(cfg.interactions):
        out[f"interaction.{i}"] = f"{it.a}|{it.b}|{_tab(it.table)}"
    for i, tl in enumerate(cfg.tilts):
        out[f"tilt.{i}"] = f"{tl.group}|{tl.a}|{tl.b}|{_tab(tl.factor)}"
    for name, cols in cfg.blocks:
        out[f"block.{name}"] = ",".join(cols)
    return out


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in split_list(s))


def _table(s: str) -> tuple[tuple[float, ...], ...]:
    return tuple(_floats(r) for r in s.split(";"))


def config_from_kv(kv: Mapping[str, str]) -> DgpConfig:
    cats: dict[str, dict] = {}
    conts: dict[str, dict] = {}
    inter, tilts, blocks = [], [], []
    top: dict = {}
    for key, val in kv.items():
        if key.startswith("dgp."):
            top[key[4:]] = val
        elif key.startswith("cat."):
            name, attr = key[4:].rsplit(".", 1)
            cats.setdefault(name, {})[attr] = val
        elif key.startswith("cont."):
            name, attr = key[5:].rsplit(".", 1)
            conts.setdefault(name, {})[attr] = val
        elif key.startswith("interaction."):
            a, b, t = val.split("|")
            inter.append((int(key.split(".")[1]), WageInteraction(a, b, _table(t))))
        elif key.startswith("tilt."):
            g, a, b, t = val.split("|")
            tilts.append((int(key.split(".")[1]), JointTilt(int(g), a, b, _table(t))))
        elif key.startswith("block."):
            blocks.append((key[6:], tuple(split_list(val))))
        else:
            raise DgpError(f"unknown dgp key {key!r}")
    categoricals = []
    for name, d in cats.items():
        coarsen = None
        if "coarsen" in d:
            coarsen = dict(item.split(":", 1) for item in split_list(d["coarsen"]))
        categoricals.append(CategoricalVar(name, tuple(split_list(d["levels"])), _floats(d["p_women"]),
                                           _floats(d["p_men"]), _floats(d["wage"]),
                                           _floats(d.get("gap", "")), coarsen))
    continuous = []
    for name, d in conts.items():
        kw = {k: float(d[k]) for k in ("mean_women", "mean_men", "sd_women", "sd_men", "center",
                                       "scale") if k in d}
        kw.update({k: _floats(d[k]) for k in ("poly", "cuts", "bin_wage", "bin_gap", "shift")
                   if k in d})
        continuous.append(ContinuousVar(name, shift_by=d.get("shift_by"), **kw))
    cfg = DgpConfig(
        n=int(top.get("n", 1000)), seed=int(top.get("seed", 0)),
        share_women=float(top.get("share_women", 0.5)),
        categoricals=tuple(categoricals), continuous=tuple(continuous),
        interactions=tuple(t for _, t in sorted(inter, key=lambda x: x[0])),
        tilts=tuple(t for _, t in sorted(tilts, key=lambda x: x[0])),
        intercept=float(top.get("intercept", 0.0)), gap=float(top.get("gap", 0.0)),
        noise_sd=float(top.get("noise_sd", 0.3)), weights=top.get("weights", UNIT),
        weight_sd=float(top.get("weight_sd", 0.5)), strata_column=top.get("strata_column"),
        strata_prob=_floats(top.get("strata_prob", "")), blocks=tuple(blocks))
    validate(cfg)
    return cfg


def dumps(cfg: DgpConfig) -> str:
    return format_kv(config_to_kv(cfg))


def loads(text: str) -> DgpConfig:
    return config_from_kv(parse_kv(text, "<dgp>"))


def export(cfg: DgpConfig, csv_path, schema_path) -> Truth:
    """Generate ``cfg`` and write the data as CSV plus schema file."""
    data, tr = generate(cfg)
    save_dataset(data, csv_path, schema_path)
    return tr


# -- presets ---------------------------------------------------------------------

def _cat(name, p_women, p_men, wage, gap=(), levels=None, coarsen=None) -> CategoricalVar:
    levels = tuple(levels or (f"{name}{i}" for i in range(len(p_women))))
    return CategoricalVar(name, levels, tuple(p_women), tuple(p_men), tuple(wage), tuple(gap),
                          coarsen)


def homogeneous_gap_dgp(n: int = 50_000, seed: int = 0, gap: float = -0.05,
                        weights: str = UNIT) -> DgpConfig:
    """Constant gap, additive wage model linear in the baseline terms.

    Only A and B differ between the groups; support blocks are A, B, x and C.
    """
    return DgpConfig(
        n=n, seed=seed, share_women=0.45, intercept=3.0, gap=gap, noise_sd=0.3, weights=weights,
        categoricals=(
            _cat("A", (0.45, 0.35, 0.20), (0.30, 0.35, 0.35), (0.0, 0.15, 0.30)),
            _cat("B", (0.30, 0.40, 0.30), (0.40, 0.35, 0.25), (0.0, -0.10, 0.10)),
            _cat("C", (0.50, 0.30, 0.20), (0.50, 0.30, 0.20), (0.0, 0.05, -0.05)),
        ),
        continuous=(ContinuousVar("x", 0.0, 0.0, poly=(0.2,), cuts=(0.0,)),),
    )


def misspecified_mu0_dgp(n: int = 50_000, seed: int = 0) -> DgpConfig:
    """Wage model with an A x B interaction the additive baseline cannot represent;
    the propensity score is additive in A and B (baseline logit is correct)."""
    table = ((0.0, 0.0, 0.0), (0.0, 0.25, -0.15), (0.0, -0.20, 0.35))
    return DgpConfig(
        n=n, seed=seed, share_women=0.45, intercept=3.0, gap=-0.05, noise_sd=0.3,
        categoricals=(
            _cat("A", (0.50, 0.30, 0.20), (0.25, 0.35, 0.40), (0.0, 0.10, 0.20)),
            _cat("B", (0.25, 0.35, 0.40), (0.45, 0.35, 0.20), (0.0, 0.05, 0.10)),
        ),
        interactions=(WageInteraction("A", "B", table),),
        continuous=(ContinuousVar("x", 0.0, 0.0, poly=(0.2,)),),
        blocks=(("A", ("A",)), ("B", ("B",))),
    )


def misspecified_pscore_dgp(n: int = 50_000, seed: int = 0) -> DgpConfig:
    """Additive wage model (baseline is correct) while the women's joint law of A and B
    is tilted, so the true propensity logit contains an A x B interaction."""
    factor = ((4.0, 1.0, 0.25), (1.0, 1.0, 1.0), (0.25, 1.0, 4.0))
    return DgpConfig(
        n=n, seed=seed, share_women=0.45, intercept=3.0, gap=-0.05, noise_sd=0.3,
        categoricals=(
            _cat("A", (0.40, 0.30, 0.30), (0.30, 0.35, 0.35), (0.0, 0.15, 0.30)),
            _cat("B", (0.35, 0.35, 0.30), (0.30, 0.35, 0.35), (0.0, 0.10, 0.20)),
        ),
        tilts=(JointTilt(1, "A", "B", factor),),
        continuous=(ContinuousVar("x", 0.0, 0.0, poly=(0.2,)),),
        blocks=(("A", ("A",)), ("B", ("B",))),
    )


def heterogeneous_gap_dgp(n: int = 50_000, seed: int = 0) -> DgpConfig:
    """Gap varying with A, nonlinear wage model (A x B interaction, cubic in x and a
    women-only shift of x by A), so the additive baseline wage model is wrong."""
    table = ((0.0, 0.0, 0.0), (0.0, 0.30, -0.10), (0.0, -0.25, 0.40))
    return DgpConfig(
        n=n, seed=seed, share_women=0.45, intercept=3.0, gap=0.0, noise_sd=0.3,
        categoricals=(
            _cat("A", (0.50, 0.30, 0.20), (0.25, 0.35, 0.40), (0.0, 0.10, 0.20),
                 gap=(-0.10, -0.05, -0.02)),
            _cat("B", (0.25, 0.35, 0.40), (0.45, 0.35, 0.20), (0.0, 0.05, 0.10)),
        ),
        interactions=(WageInteraction("A", "B", table),),
        continuous=(ContinuousVar("x", -0.3, 0.0, poly=(0.15, 0.0, 0.05), cuts=(0.0,)),),
    )


# Women's and men's level shares by block; private sector first, then public.
_SHAPE_LEVELS = {
    "mgmt": (("top", "upper", "middle", "lower", "none"),
             ((.031, .047, .079, .071, .772), (.073, .076, .101, .083, .667)),
             ((.011, .075, .067, .057, .790), (.040, .109, .109, .077, .665)),
             (0.60, 0.40, 0.25, 0.12, 0.0)),
    "edu": (("higher", "vocational", "none", "other"),
            ((.284, .474, .187, .055), (.320, .466, .168, .046)),
            ((.539, .279, .074, .108), (.570, .288, .048, .094)),
            (0.35, 0.10, -0.10, 0.0)),
    "industry": (("manuf", "trade", "finance", "health", "hospitality", "services"),
                 ((.10, .22, .10, .25, .10, .23), (.28, .20, .12, .08, .07, .25)),
                 ((.05, .05, .10, .45, .05, .30), (.12, .08, .15, .25, .05, .35)),
                 (0.05, -0.05, 0.25, 0.0, -0.20, 0.05)),
    "occupation": (("<25%", "25-50%", "50-75%", ">75%"),
                   ((.044, .381, .346, .229), (.297, .518, .158, .027)),
                   ((.028, .296, .395, .281), (.107, .440, .278, .175)),
                   (0.15, 0.10, -0.05, -0.15)),
    "size": (("<20", "20-49", "50-249", "250-999", ">999"),
             ((.255, .131, .237, .142, .235), (.215, .162, .258, .157, .208)),
             ((.015, .029, .123, .117, .716), (.017, .027, .091, .108, .757)),
             (-0.10, -0.05, 0.0, 0.03, 0.06)),
    "irregular": (("no", "yes"),
                  ((.670, .330), (.589, .411)),
                  ((.862, .138), (.773, .227)),
                  (0.0, 0.08)),
    "parttime": (("20-49%", "50-79%", "80-99%", "100%"),
                 ((.195, .235, .164, .406), (.038, .046, .066, .850)),
                 ((.187, .303, .221, .289), (.059, .086, .124, .731)),
                 (-0.06, -0.04, -0.02, 0.0)),
}

# Women-only low-wage levels of the public-sector shape: (block, level, women share, wage).
_PUBLIC_ONLY = (("occupation", "care-only", 0.16, -1.0), ("parttime", "<20%", 0.14, -1.0))

_SHAPE_ORDER = ("mgmt", "edu", "age", "industry", "occupation", "size", "irregular", "tenure",
                "parttime")


def _shape_config(sector: str, n: int, seed: int, wage_scale: float, only_scale: float,
                  gap: float) -> DgpConfig:
    col = 1 if sector == "private" else 2
    cats = []
    for name in ("mgmt", "edu", "industry", "occupation", "size", "irregular", "parttime"):
        levels, priv, pub, wage = _SHAPE_LEVELS[name]
        pw, pm = (priv, pub)[col - 1]
        levels, pw, pm = list(levels), list(pw), list(pm)
        wage = [wage_scale * w for w in wage]
        if sector == "public":
            for blk, lvl, share, wv in _PUBLIC_ONLY:
                if blk == name:
                    pw = [p * (1 - share) for p in pw] + [share]
                    pm = pm + [0.0]
                    levels.append(lvl)
                    wage.append(only_scale * wv)
        cats.append(CategoricalVar(name, tuple(levels), tuple(pw), tuple(pm), tuple(wage)))
    age = ContinuousVar("age", 39.5, 40.0, 10.5, 10.5, center=40.0, scale=10.0,
                        poly=(wage_scale * 0.12, wage_scale * -0.05), cuts=(30.0, 40.0, 50.0))
    tenure = ContinuousVar("tenure", 6.5, 8.0, 5.5, 6.0, center=7.0, scale=5.0,
                           poly=(wage_scale * 0.05,), cuts=(2.0, 5.0, 8.0, 16.0))
    return DgpConfig(n=n, seed=seed, share_women=0.43, intercept=8.7, gap=gap, noise_sd=0.25,
                     categoricals=tuple(cats), continuous=(age, tenure),
                     blocks=tuple((b, (b,)) for b in _SHAPE_ORDER))


# Calibration constants: population raw gap (log points) by sector, with the
# unexplained gap and, for the public sector, the raw gap on full support.
SHAPE_TARGETS = {
    "private": {"raw": -0.186, "unexplained": -0.042},
    "public": {"raw": -0.139, "unexplained": -0.035, "raw_on_support": -0.045},
}


def paper_shape_dgp(sector: str = "private", n: int = 200_000, seed: int = 0) -> DgpConfig:
    """Two-sector synthetic economy with a realistic support pattern.

    Level shares are set per sector in ``_SHAPE_LEVELS``. The gap is constant
    and the wage effects are rescaled so that the population raw gap matches
    ``SHAPE_TARGETS``. In the private sector every level occurs in both
    groups, so lack of support only arises from sparse cells. The public
    sector adds women-only low-wage levels in late blocks, so a large part
    of its raw gap sits outside common support.
    """
    if sector not in SHAPE_TARGETS:
        raise DgpError("sector must be 'private' or 'public'")
    t = SHAPE_TARGETS[sector]
    if sector == "private":
        base = truth(_shape_config(sector, n, seed, 1.0, 0.0, t["unexplained"]))
        # explained gap is linear in the wage scale
        scale = (t["raw"] - t["unexplained"]) / base.explained
        return _shape_config(sector, n, seed, scale, 0.0, t["unexplained"])
    # raw and raw-on-support are affine in (wage scale, women-only wage scale)
    def f(a, b):
        tr = truth(_shape_config(sector, n, seed, a, b, t["unexplained"]))
        return np.array([tr.raw, tr.raw_on_support])
    f00 = f(0.0, 0.0)
    J = np.column_stack([f(1.0, 0.0) - f00, f(0.0, 1.0) - f00])
    a, b = np.linalg.solve(J, np.array([t["raw"], t["raw_on_support"]]) - f00)
    return _shape_config(sector, n, seed, float(a), float(b), t["unexplained"])
