"""Nonparametric row bootstrap.

A replicate draws ``n`` rows with replacement. It is represented by
multinomial draw counts: rows drawn at least once are kept with their
sampling weight multiplied by the count. Every weighted mean, regression
and quantile is then identical to the one on the physically duplicated
sample, without copying rows.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, TypeVar

import numpy as np

from .data import Dataset

T = TypeVar("T")

MAX_FAIL_SHARE = 0.05


class BootstrapError(RuntimeError):
    pass


def replicate_rng(seed: int, b: int) -> np.random.Generator:
    """Independent stream for replicate ``b``; does not depend on scheduling."""
    return np.random.default_rng([seed, b])


def bootstrap_sample(data: Dataset, rng: np.random.Generator) -> Dataset:
    n = data.n_rows
    counts = rng.multinomial(n, np.full(n, 1.0 / n))
    rows = np.flatnonzero(counts)
    return data.subset(rows, weight=data.weight[rows] * counts[rows])


def run_replicates(fn: Callable[[Dataset], T], data: Dataset, B: int, seed: int = 0,
                   threads: int = 1) -> list[T | BaseException]:
    """Evaluate ``fn`` on ``B`` bootstrap samples; failures are returned, not raised."""
    if B < 2:
        raise ValueError("B must be >= 2")

    def one(b: int):
        try:
            return fn(bootstrap_sample(data, replicate_rng(seed, b)))
        except Exception as exc:  # replicate failures are counted by the caller
            return exc

    if threads <= 1:
        return [one(b) for b in range(B)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(B)))


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    se: float
    replicates: np.ndarray
    n_failed: int


def se_from_replicates(values, n_failed: int, B: int) -> BootstrapResult:
    """Standard deviation (ddof=1) of the successful replicates.

    More than 5% failed replicates is an error.
    """
    if n_failed > MAX_FAIL_SHARE * B:
        raise BootstrapError(f"{n_failed} of {B} bootstrap replicates failed")
    vals = np.asarray(values, dtype=float)
    se = float(np.std(vals, ddof=1)) if vals.shape[0] >= 2 else math.nan
    return BootstrapResult(se, vals, n_failed)


def bootstrap_se(procedure: Callable[[Dataset], float], data: Dataset, B: int = 200,
                 seed: int = 0, threads: int = 1) -> BootstrapResult:
    """Bootstrap standard error of ``procedure(data)``.

    ``procedure`` must refit everything it depends on (nuisance models,
    trimming, radius, penalty choice) from the data it is given.
    """
    out = run_replicates(procedure, data, B, seed, threads)
    vals = [v for v in out if not isinstance(v, BaseException) and math.isfinite(v)]
    return se_from_replicates(vals, B - len(vals), B)
