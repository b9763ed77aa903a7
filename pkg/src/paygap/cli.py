"""Command-line front end.

Subcommands::

    paygap support   --data D --schema S [--config C] --out-dir O [--order ORDER]
    paygap estimate  --data D --schema S [--config C] --out-dir O
    paygap diagnose  --data D --schema S [--config C] --out-dir O
    paygap simulate  --dgp NAME --out-dir O [--n N]

Run configs are flat ``key = value`` files (see :data:`CONFIG_KEYS`). Every
output is a pure function of the inputs, the config and the seed.
Exit codes: 0 success, 2 invalid input or config, 3 every grid cell failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dgp as dgp_mod
from .data import REGIMES, Dataset, SchemaError, build_design, load_dataset, spec_for
from .estimators import ESTIMATORS, EstimationConfig, Nuisance
from .grid import GRID_ESTIMATORS, GridConfig, run_grid, write_grid
from .kv import KeyValueError, format_kv, read_kv, split_list
from .lasso import LassoConfig, pds_select
from .linmod import BINOMIAL, GAUSSIAN, oos_prediction_power
from .support import SupportDefinition, nested_supports, order_blocks, sequential_support_analysis

log = logging.getLogger("paygap")

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 2, 3
ORDERS = ("deltaR2", "given", "random", "increasing")
HIST_BINS = 20


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    order: str = "deltaR2"
    order_blocks: tuple[str, ...] = ()
    supports: tuple[SupportDefinition, ...] = ()
    support_sizes: tuple[int, ...] = ()
    estimators: tuple[str, ...] = GRID_ESTIMATORS
    regimes: tuple[str, ...] = REGIMES
    trim_quantile: float = 0.995
    radius_quantile: float = 0.99
    psm_exact_blocks: tuple[str, ...] | None = None
    aipw_folds: int = 2
    lasso_folds: int = 5
    lasso_n_lambda: int = 100
    lasso_min_ratio: float = 1e-4
    bootstrap: int = 200
    fast_bootstrap: bool = False
    threads: int = 1
    baseline_degree: int = 2
    full_degree: int = 7
    benchmark: tuple[str, str, str | None] = ("BO", "Baseline", None)

    def estimation(self) -> EstimationConfig:
        lasso = LassoConfig(n_lambda=self.lasso_n_lambda, folds=self.lasso_folds, seed=self.seed,
                            lambda_min_ratio=self.lasso_min_ratio)
        return EstimationConfig(seed=self.seed, trim_quantile=self.trim_quantile,
                                radius_quantile=self.radius_quantile, aipw_folds=self.aipw_folds,
                                lasso=lasso, psm_exact_blocks=self.psm_exact_blocks)

    def grid(self) -> GridConfig:
        return GridConfig(estimation=self.estimation(), bootstrap=self.bootstrap,
                          fast_bootstrap=self.fast_bootstrap, threads=self.threads,
                          baseline_degree=self.baseline_degree, full_degree=self.full_degree,
                          benchmark=self.benchmark)


# key -> (RunConfig field, parser)
def _int(v: str) -> int:
    return int(v)


def _bool(v: str) -> bool:
    low = v.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _names(v: str) -> tuple[str, ...]:
    return tuple(split_list(v))


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in split_list(v))


def _benchmark(v: str) -> tuple[str, str, str | None]:
    parts = [p.strip() for p in v.split("/")]
    if len(parts) not in (2, 3) or not all(parts):
        raise ValueError("expected estimator/regime[/support]")
    return parts[0], parts[1], parts[2] if len(parts) == 3 else None


CONFIG_KEYS = {
    "seed": ("seed", _int),
    "support.order": ("order", str),
    "support.blocks": ("order_blocks", _names),
    "grid.support_sizes": ("support_sizes", _ints),
    "grid.estimators": ("estimators", _names),
    "grid.regimes": ("regimes", _names),
    "ipw.trim_quantile": ("trim_quantile", float),
    "psm.radius_quantile": ("radius_quantile", float),
    "psm.exact_blocks": ("psm_exact_blocks", _names),
    "aipw.folds": ("aipw_folds", _int),
    "lasso.folds": ("lasso_folds", _int),
    "lasso.n_lambda": ("lasso_n_lambda", _int),
    "lasso.lambda_min_ratio": ("lasso_min_ratio", float),
    "bootstrap.B": ("bootstrap", _int),
    "bootstrap.fast": ("fast_bootstrap", _bool),
    "threads": ("threads", _int),
    "spec.baseline_degree": ("baseline_degree", _int),
    "spec.full_degree": ("full_degree", _int),
    "benchmark": ("benchmark", _benchmark),
}
SUPPORT_PREFIX = "support."   # support.<id> = block,block,...


def parse_run_config(kv: dict[str, str]) -> RunConfig:
    """Build a :class:`RunConfig`; unknown keys and bad values raise :class:`ConfigError`.

    Explicit supports are declared as ``support.<id> = block1,block2`` in file
    order; without them the grid uses nested supports along ``support.order``.
    """
    values: dict[str, object] = {}
    supports = []
    for key, raw in kv.items():
        if key in CONFIG_KEYS:
            name, conv = CONFIG_KEYS[key]
            try:
                values[name] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"config key {key!r}: {exc}") from None
        elif key.startswith(SUPPORT_PREFIX) and key[len(SUPPORT_PREFIX):]:
            blocks = _names(raw)
            if not blocks:
                raise ConfigError(f"config key {key!r}: empty block list")
            supports.append(SupportDefinition(key[len(SUPPORT_PREFIX):], blocks))
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if supports:
        values["supports"] = tuple(supports)
    cfg = RunConfig(**values)
    if cfg.order not in ORDERS:
        raise ConfigError(f"support.order must be one of {ORDERS}, got {cfg.order!r}")
    bad = [e for e in cfg.estimators if e not in ESTIMATORS]
    if bad:
        raise ConfigError(f"unknown estimator(s) {bad}")
    bad = [r for r in cfg.regimes if r not in REGIMES]
    if bad:
        raise ConfigError(f"unknown regime(s) {bad}")
    if cfg.bootstrap == 1 or cfg.bootstrap < 0:
        raise ConfigError("bootstrap.B must be 0 or >= 2")
    try:
        cfg.estimation()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def run_config_to_kv(cfg: RunConfig) -> dict[str, str]:
    """Inverse of :func:`parse_run_config` (used to record the effective config)."""
    out: dict[str, str] = {}
    by_field = {name: key for key, (name, _) in CONFIG_KEYS.items()}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if f.name == "supports":
            continue
        key = by_field[f.name]
        if v is None or v == ():
            continue
        if f.name == "benchmark":
            out[key] = "/".join(x for x in v if x is not None)
        elif isinstance(v, tuple):
            out[key] = ",".join(str(x) for x in v)
        else:
            out[key] = str(v)
    for s in cfg.supports:
        out[SUPPORT_PREFIX + s.id] = ",".join(s.blocks)
    return out


# -- helpers ---------------------------------------------------------------------

def _load(args, seed_override=True) -> tuple[Dataset, RunConfig]:
    cfg = parse_run_config(read_kv(args.config)) if args.config else RunConfig()
    if seed_override and args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "threads", None):
        cfg = replace(cfg, threads=args.threads)
    data = load_dataset(args.data, args.schema)
    return data, cfg


def _block_order(data: Dataset, cfg: RunConfig) -> list[str]:
    order, _ = order_blocks(data, cfg.order, cfg.order_blocks or None, cfg.seed)
    return order


def _supports(data: Dataset, cfg: RunConfig) -> list[SupportDefinition]:
    if cfg.supports:
        return list(cfg.supports)
    order = _block_order(data, cfg)
    return nested_supports(order, cfg.support_sizes or None)


def _f(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.10g}"


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[object]]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8")


# -- subcommands -----------------------------------------------------------------

def cmd_support(args) -> int:
    data, cfg = _load(args)
    if args.order:
        cfg = replace(cfg, order=args.order)
    if args.blocks:
        cfg = replace(cfg, order_blocks=_names(args.blocks))
    if cfg.order == "given" and not cfg.order_blocks:
        raise ConfigError("order 'given' needs support.blocks or --blocks")
    order, importance = order_blocks(data, cfg.order, cfg.order_blocks or None, cfg.seed)
    report = sequential_support_analysis(data, order, importance)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / "support_curve.csv")
    (out / "support_curve.txt").write_text(report.to_text(), encoding="utf-8")
    return EXIT_OK


def cmd_estimate(args) -> int:
    data, cfg = _load(args)
    supports = _supports(data, cfg)
    benchmark = cfg.benchmark
    if benchmark[2] is None:
        benchmark = (benchmark[0], benchmark[1], supports[0].id)
    results = run_grid(data, supports, cfg.estimators, cfg.regimes, cfg.grid())
    out = Path(args.out_dir)
    write_grid(results, out, benchmark)
    eff = replace(cfg, supports=tuple(supports), benchmark=benchmark)
    (out / "run_config.txt").write_text(format_kv(run_config_to_kv(eff)), encoding="utf-8")
    failed = [r for r in results if not r.ok]
    for r in failed:
        log.warning("cell %s/%s/%s failed: %s", r.support_id, r.regime, r.estimator, r.error)
    if len(failed) == len(results):
        print("error: every grid cell failed", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def propensity_histogram(p: np.ndarray, group: np.ndarray, weight: np.ndarray,
                         bins: int = HIST_BINS) -> list[tuple[int, float, float, int, float]]:
    """Per group: (group, bin_lo, bin_hi, count, weighted share) over equal-width bins on [0, 1]."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.minimum((p * bins).astype(np.int64), bins - 1)
    rows = []
    for g in (1, 0):
        m = group == g
        cnt = np.bincount(idx[m], minlength=bins)
        wt = np.bincount(idx[m], weights=weight[m], minlength=bins)
        share = wt / wt.sum() if wt.sum() > 0 else wt
        for b in range(bins):
            rows.append((g, float(edges[b]), float(edges[b + 1]), int(cnt[b]), float(share[b])))
    return rows


def cmd_diagnose(args) -> int:
    data, cfg = _load(args)
    ecfg = cfg.estimation()
    kw = {"degree": cfg.full_degree, "baseline_degree": cfg.baseline_degree}
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hist, selected, power = [], [], []
    for regime in cfg.regimes:
        spec = spec_for(data.schema, regime, **kw)
        nuis = Nuisance(data, spec, ecfg.lasso)
        p = nuis.p_hat()
        for g, lo, hi, cnt, share in propensity_histogram(p, data.group, data.weight):
            hist.append([regime, g, _f(lo), _f(hi), cnt, _f(share)])
        n_cand = build_design(data, spec).n_columns
        wage = oos_prediction_power(data, spec, GAUSSIAN, seed=cfg.seed, lasso=ecfg.lasso)
        logit = oos_prediction_power(data, spec, BINOMIAL, seed=cfg.seed, lasso=ecfg.lasso)
        power.append([regime, n_cand, _f(wage), _f(logit)])
        if regime == "ML":
            mu0 = nuis.mu0()
            rec: dict[str, float] = {}
            pds = pds_select(data, spec, ecfg.lasso, X=nuis.X, record=rec)
            selected += [
                [regime, "wage_men", n_cand, len(mu0.selected), _f(nuis.selected_lambdas["mu0/all"])],
                [regime, "propensity", n_cand, len(nuis.pscore().selected),
                 _f(nuis.selected_lambdas["pscore/all"])],
                [regime, "pds_union", n_cand, len(pds), "nan"],
            ]
    _write_csv(out / "propensity_hist.csv",
               ("regime", "group", "bin_lo", "bin_hi", "count", "weight_share"), hist)
    _write_csv(out / "selected_counts.csv",
               ("regime", "model", "n_candidates", "n_selected", "lambda"), selected)
    _write_csv(out / "prediction_power.csv",
               ("regime", "n_columns", "oos_r2_wage", "oos_loglik_propensity"), power)
    return EXIT_OK


PRESETS = {
    "homogeneous": dgp_mod.homogeneous_gap_dgp,
    "heterogeneous": dgp_mod.heterogeneous_gap_dgp,
    "misspecified_mu0": dgp_mod.misspecified_mu0_dgp,
    "misspecified_pscore": dgp_mod.misspecified_pscore_dgp,
    "private": lambda n, seed: dgp_mod.paper_shape_dgp("private", n, seed),
    "public": lambda n, seed: dgp_mod.paper_shape_dgp("public", n, seed),
}


def cmd_simulate(args) -> int:
    if args.dgp in PRESETS:
        n = args.n if args.n is not None else 50_000
        cfg = PRESETS[args.dgp](n=n, seed=args.seed or 0)
    else:
        path = Path(args.dgp)
        if not path.exists():
            raise ConfigError(f"unknown DGP {args.dgp!r}: not a preset ({', '.join(PRESETS)}) "
                              "or a config file")
        cfg = dgp_mod.config_from_kv(read_kv(path))
        if args.n is not None:
            cfg = replace(cfg, n=args.n)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tr = dgp_mod.export(cfg, out / "data.csv", out / "schema.txt")
    (out / "dgp.txt").write_text(dgp_mod.dumps(cfg), encoding="utf-8")
    truth = {"raw": _f(tr.raw), "unexplained": _f(tr.unexplained), "explained": _f(tr.explained),
             "support_share": _f(tr.support_share)}
    (out / "truth.txt").write_text(format_kv(truth), encoding="utf-8")
    return EXIT_OK


# -- entry point -----------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="paygap", description="Unexplained pay-gap estimation.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--data", required=True)
        p.add_argument("--schema", required=True)
        p.add_argument("--config")
        p.add_argument("--out-dir", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)

    p = sub.add_parser("support", help="sequential common-support analysis")
    common(p)
    p.add_argument("--order", choices=ORDERS)
    p.add_argument("--blocks", help="comma-separated block order for --order given")
    p.set_defaults(func=cmd_support)
    p = sub.add_parser("estimate", help="estimation grid")
    common(p)
    p.set_defaults(func=cmd_estimate)
    p = sub.add_parser("diagnose", help="propensity histograms, selection counts, prediction power")
    common(p)
    p.set_defaults(func=cmd_diagnose)
    p = sub.add_parser("simulate", help="write a synthetic dataset with known gaps")
    p.add_argument("--dgp", required=True, help=f"preset ({', '.join(PRESETS)}) or DGP config file")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, KeyValueError, SchemaError, dgp_mod.DgpError, FileNotFoundError,
            KeyError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
