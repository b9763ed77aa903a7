"""Monte Carlo harness: repeat a grid over seeded DGP draws and score it against the truth."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .dgp import DgpConfig, Truth, generate
from .estimators import GapEstimate
from .grid import GridConfig, run_grid
from .support import SupportDefinition

CellKey = tuple[str, str, str]   # (support id, regime, estimator)


@dataclass(frozen=True, eq=False)
class MonteCarloResult:
    seeds: tuple[int, ...]
    truths: tuple[Truth, ...]
    estimates: dict[CellKey, np.ndarray]   # one entry per seed, nan where the cell failed

    def mc_se(self, key: CellKey) -> float:
        """Standard deviation of the estimates across seeds (ddof=1)."""
        v = self.estimates[key]
        v = v[np.isfinite(v)]
        return float(np.std(v, ddof=1)) if v.shape[0] >= 2 else math.nan

    def within(self, key: CellKey, target: float, k: float = 3.0, se: float | None = None) -> int:
        """Seeds whose estimate lies within ``k`` standard errors of ``target``."""
        se = self.mc_se(key) if se is None else se
        v = self.estimates[key]
        return int(np.sum(np.abs(v - target) <= k * se))

    def bias(self, key: CellKey, target: float) -> float:
        return float(np.nanmean(self.estimates[key]) - target)


def run_monte_carlo(make_config: Callable[[int], DgpConfig], seeds: Sequence[int],
                    supports: Callable[[DgpConfig], Sequence[SupportDefinition]] | Sequence[SupportDefinition],
                    estimators: Sequence[str], regimes: Sequence[str],
                    grid_cfg: GridConfig = GridConfig(),
                    progress: Callable[[int, list[GapEstimate]], None] | None = None
                    ) -> MonteCarloResult:
    """Draw one dataset per seed, run the grid on it and collect point estimates.

    The grid seed (folds, cross-fitting, bootstrap) follows the DGP seed.
    """
    est: dict[CellKey, list[float]] = {}
    truths = []
    for i, seed in enumerate(seeds):
        cfg = make_config(seed)
        data, tr = generate(cfg)
        truths.append(tr)
        sups = supports(cfg) if callable(supports) else supports
        gcfg = replace(grid_cfg, estimation=replace(grid_cfg.estimation, seed=seed))
        res = run_grid(data, sups, estimators, regimes, gcfg)
        for r in res:
            est.setdefault((r.support_id, r.regime, r.estimator), [math.nan] * len(seeds))[i] = \
                r.delta_hat if r.ok else math.nan
        if progress is not None:
            progress(seed, res)
    return MonteCarloResult(tuple(seeds), tuple(truths),
                            {k: np.array(v) for k, v in est.items()})
