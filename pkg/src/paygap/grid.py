"""The estimation grid: supports x model regimes x estimators, with bootstrap SEs."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import estimators as est
from .data import BASELINE, ML, REGIMES, Dataset, spec_for
from .estimators import (AIPW, BO, EXM, EXPSM, IPW, LRM, PDS, PSM, EstimationConfig, GapEstimate,
                         Nuisance)
from .inference import BootstrapError, run_replicates, se_from_replicates
from .support import SupportDefinition, build_cells

log = logging.getLogger(__name__)

GRID_ESTIMATORS = (LRM, BO, IPW, AIPW, PSM, EXPSM)


@dataclass(frozen=True)
class GridConfig:
    estimation: EstimationConfig = EstimationConfig()
    bootstrap: int = 0                 # replicates; 0 skips standard errors
    fast_bootstrap: bool = False       # reuse full-sample LASSO penalties in replicates
    threads: int = 1
    baseline_degree: int = 2
    full_degree: int = 7
    interactions: tuple[tuple[str, str], ...] | None = None
    benchmark: tuple[str, str, str | None] = (BO, BASELINE, None)   # None = first support

    @property
    def seed(self) -> int:
        return self.estimation.seed


def _label(estimator: str, regime: str) -> str:
    return PDS if (estimator == LRM and regime == ML) else estimator


def _run_one(name: str, data: Dataset, cells, spec, cfg: EstimationConfig, nuis: Nuisance,
             psm_blocks) -> GapEstimate:
    if name == LRM:
        return est.estimate_lrm(data, spec, cfg, nuis)
    if name == BO:
        return est.estimate_bo(data, spec, cfg, nuis)
    if name == IPW:
        return est.estimate_ipw(data, spec, cfg, nuis)
    if name == AIPW:
        return est.estimate_aipw(data, spec, cfg, nuis)
    if name == PSM:
        return est.estimate_psm(data, spec, cfg, nuis, exact_blocks=psm_blocks)
    if name == EXPSM:
        return est.estimate_expsm(data, cells, spec, cfg, nuis)
    if name == PDS:
        return est.estimate_pds(data, spec, cfg, nuis)
    raise ValueError(f"unknown estimator {name!r}")


def _failure(name, regime, sid, exc) -> GapEstimate:
    return GapEstimate(name, regime, sid, math.nan, error=f"{type(exc).__name__}: {exc}")


def _grid_keys(supports, estimators, regimes) -> list[tuple[str, str, str]]:
    keys = []
    for s in supports:
        for r in regimes:
            for e in estimators:
                k = (s.id, r, _label(e, r))
                if k not in keys:
                    keys.append(k)
    return keys


def _compute(data: Dataset, supports: Sequence[SupportDefinition], estimators: Sequence[str],
             regimes: Sequence[str], cfg: GridConfig, frozen: dict | None = None):
    """Point estimates for every grid cell; failures are recorded, not raised."""
    ecfg = cfg.estimation
    psm_blocks = ecfg.psm_exact_blocks
    if psm_blocks is None:
        psm_blocks = min(supports, key=lambda s: len(s.blocks)).blocks
    out: dict[tuple[str, str, str], GapEstimate] = {}
    lambdas: dict[tuple[str, str], dict[str, float]] = {}
    kw = {"degree": cfg.full_degree, "baseline_degree": cfg.baseline_degree,
          "interactions": cfg.interactions}
    # supports with identical on-support rows share the data and nuisance fits
    shared: dict[bytes, tuple[Dataset, dict[str, Nuisance]]] = {}
    for s in supports:
        try:
            s.validate(data)
            full_cells = build_cells(data, s)
            key = np.packbits(full_cells.on_support).tobytes()
            if key not in shared:
                sub = data.subset(full_cells.on_support)
                sub.require_both_groups()
                shared[key] = (sub, {})
            sub, fits = shared[key]
            cells = build_cells(sub, s)
        except Exception as exc:
            for r in regimes:
                for e in estimators:
                    out[(s.id, r, _label(e, r))] = _failure(_label(e, r), r, s.id, exc)
            continue
        exm = None
        for r in regimes:
            spec = spec_for(data.schema, r, **kw)
            if r not in fits:
                fits[r] = Nuisance(sub, spec, ecfg.lasso, (frozen or {}).get((s.id, r)))
            nuis = fits[r]
            for e in estimators:
                name = _label(e, r)
                key = (s.id, r, name)
                if key in out:
                    continue
                try:
                    if e == EXM:
                        if exm is None:
                            exm = est.exact_match(sub, cells)
                        res = exm
                    else:
                        res = _run_one(name, sub, cells, spec, ecfg, nuis, psm_blocks)
                    out[key] = replace(res, estimator=name, regime=r, support_id=s.id)
                except Exception as exc:
                    log.info("grid cell %s failed: %s", key, exc)
                    out[key] = _failure(name, r, s.id, exc)
            if nuis.selected_lambdas:
                lambdas[(s.id, r)] = dict(nuis.selected_lambdas)
    return out, lambdas


def run_grid(data: Dataset, supports: Sequence[SupportDefinition], estimators: Sequence[str] = GRID_ESTIMATORS,
             regimes: Sequence[str] = REGIMES, cfg: GridConfig = GridConfig()) -> list[GapEstimate]:
    """Estimate every (support, regime, estimator) combination.

    Each support restricts the data to its on-support rows. LRM in the ML
    regime is the post-double-selection estimator and is labelled PDS; EXM
    does not depend on the regime and is repeated for each one. With
    ``cfg.bootstrap > 0`` the whole grid is re-run on every bootstrap
    replicate and each cell gets the replicate standard deviation as its SE.
    """
    unknown = [e for e in estimators if e not in est.ESTIMATORS]
    if unknown:
        raise ValueError(f"unknown estimator(s) {unknown}")
    bad = [r for r in regimes if r not in REGIMES]
    if bad:
        raise ValueError(f"unknown regime(s) {bad}")
    ids = [s.id for s in supports]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate support ids")
    keys = _grid_keys(supports, estimators, regimes)
    point, lambdas = _compute(data, supports, estimators, regimes, cfg)
    ecfg = cfg.estimation
    blocks = {s.id: "|".join(s.blocks) for s in supports}
    ses: dict = {}
    if cfg.bootstrap:
        frozen = lambdas if cfg.fast_bootstrap else None

        def replicate(d: Dataset):
            res, _ = _compute(d, supports, estimators, regimes, cfg, frozen)
            return {k: v.delta_hat if v.ok else None for k, v in res.items()}

        reps = run_replicates(replicate, data, cfg.bootstrap, ecfg.seed, cfg.threads)
        for k in keys:
            vals = []
            for rep in reps:
                if isinstance(rep, BaseException):
                    continue
                v = rep.get(k)
                if v is not None and math.isfinite(v):
                    vals.append(v)
            try:
                ses[k] = (se_from_replicates(vals, cfg.bootstrap - len(vals), cfg.bootstrap), None)
            except BootstrapError as exc:
                ses[k] = (None, str(exc))
    results = []
    for k in keys:
        r = point[k]
        prov = {"support_blocks": blocks[k[0]], "seed": ecfg.seed,
                "trim_quantile": ecfg.trim_quantile, "radius_quantile": ecfg.radius_quantile,
                "aipw_folds": ecfg.aipw_folds, "lasso_folds": ecfg.lasso.folds,
                "n_lambda": ecfg.lasso.n_lambda, "bootstrap": cfg.bootstrap,
                "fast_bootstrap": cfg.fast_bootstrap}
        diag = dict(r.diagnostics)
        for name, lam in sorted(lambdas.get((k[0], k[1]), {}).items()):
            diag[f"lambda[{name}]"] = lam
        se = r.se
        if k in ses:
            boot, err = ses[k]
            if boot is not None:
                se = boot.se
                diag["bootstrap_failed"] = float(boot.n_failed)
            else:
                diag["bootstrap_error"] = 1.0
                log.warning("cell %s: %s", k, err)
        results.append(replace(r, se=se, diagnostics=diag, provenance=prov))
    return results


# -- reports ---------------------------------------------------------------------

CSV_COLUMNS = ("support", "support_blocks", "regime", "estimator", "delta_log", "percent", "se",
               "pct_diff_benchmark", "n_women_used", "n_men_used", "n_trimmed", "n_unmatched",
               "status", "seed", "trim_quantile", "radius_quantile", "aipw_folds", "bootstrap",
               "diagnostics")


def _f(x) -> str:
    x = float(x)
    return "nan" if math.isnan(x) else f"{x:.10g}"


def find_benchmark(results: Sequence[GapEstimate], benchmark=(BO, BASELINE, None)) -> GapEstimate | None:
    estimator, regime, sid = benchmark
    if sid is None and results:
        sid = results[0].support_id
    for r in results:
        if (r.estimator, r.regime, r.support_id) == (estimator, regime, sid) and r.ok:
            return r
    return None


def pct_diff(delta: float, bench: GapEstimate | None) -> float:
    """Relative difference to the benchmark gap in percent, ``100 * (delta / bench - 1)``."""
    if bench is None or bench.delta_hat == 0 or not math.isfinite(delta):
        return math.nan
    if delta == bench.delta_hat:
        return 0.0
    return 100.0 * (delta / bench.delta_hat - 1.0)


def grid_csv(results: Sequence[GapEstimate], benchmark=(BO, BASELINE, None)) -> str:
    bench = find_benchmark(results, benchmark)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in results:
        p = r.provenance
        diag = ";".join(f"{k}={_f(v)}" for k, v in sorted(r.diagnostics.items()))
        w.writerow([r.support_id, p.get("support_blocks", ""), r.regime, r.estimator,
                    _f(r.delta_hat), _f(r.percent) if r.ok else "nan", _f(r.se),
                    _f(pct_diff(r.delta_hat, bench)), r.n_women_used, r.n_men_used, r.n_trimmed,
                    r.n_unmatched, "ok" if r.ok else f"failed: {r.error}", p.get("seed", ""),
                    p.get("trim_quantile", ""), p.get("radius_quantile", ""),
                    p.get("aipw_folds", ""), p.get("bootstrap", ""), diag])
    return buf.getvalue()


def grid_table(results: Sequence[GapEstimate]) -> str:
    """Plain-text table: one row per (support, estimator), one column per regime.

    Cells show the gap in log points and, in parentheses, its standard error.
    """
    regimes = list(dict.fromkeys(r.regime for r in results))
    rows: dict[tuple[str, str], dict[str, GapEstimate]] = {}
    for r in results:
        rows.setdefault((r.support_id, r.estimator), {})[r.regime] = r
    width = 22
    head = f"{'support':<12}{'estimator':<10}" + "".join(f"{g:>{width}}" for g in regimes)
    lines = [head, "-" * len(head)]
    for (sid, name), cells in rows.items():
        parts = []
        for g in regimes:
            r = cells.get(g)
            if r is None:
                parts.append(f"{'':>{width}}")
            elif not r.ok:
                parts.append(f"{'failed':>{width}}")
            else:
                se = "" if math.isnan(r.se) else f" ({r.se:.4f})"
                parts.append(f"{r.delta_hat:.4f}{se}".rjust(width))
        lines.append(f"{sid:<12}{name:<10}" + "".join(parts))
    return "\n".join(lines) + "\n"


def write_grid(results: Sequence[GapEstimate], out_dir: str | Path,
               benchmark=(BO, BASELINE, None)) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "estimates.csv"
    txt_path = out_dir / "estimates.txt"
    csv_path.write_text(grid_csv(results, benchmark), encoding="utf-8")
    txt_path.write_text(grid_table(results), encoding="utf-8")
    return csv_path, txt_path
