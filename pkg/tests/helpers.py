"""Shared test fixtures: small random datasets and the acceptance report."""

from __future__ import annotations

import numpy as np

from paygap.data import CATEGORICAL, CONTINUOUS, Column, Dataset, Schema, VariableBlock

# criterion number -> (passed, detail); printed by the terminal summary hook
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def report(k: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[k] = (bool(passed), detail)
    print(f"criterion {k}: {'PASS' if passed else 'FAIL'} - {detail}")


def small_dataset(rng: np.random.Generator, n: int = 300, levels=(3, 4), continuous: int = 1,
                  weights: bool = True, gap: float = -0.1) -> Dataset:
    """Random dataset with categorical covariates c0, c1, ... and continuous x0, x1, ...

    Group membership and wages both depend on the covariates, so the raw and
    unexplained gaps differ.
    """
    g = (rng.random(n) < 0.45).astype(np.int8)
    g[0], g[1] = 0, 1
    cov: dict[str, np.ndarray] = {}
    cols = []
    y = 2.5 + gap * g + rng.normal(0, 0.3, n)
    for j, k in enumerate(levels):
        name = f"c{j}"
        shift = np.where(g == 1, 0.8, 0.0)
        logits = rng.normal(0, 1, k)[None, :] + np.outer(shift, np.linspace(-1, 1, k))
        prob = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        codes = (prob.cumsum(axis=1) < rng.random(n)[:, None]).sum(axis=1)
        codes = np.minimum(codes, k - 1)
        cov[name] = codes
        y = y + rng.normal(0, 0.2, k)[codes]
        cols.append(Column(name, CATEGORICAL, tuple(f"L{i}" for i in range(k))))
    for j in range(continuous):
        name = f"x{j}"
        x = rng.normal(0.3 * g, 1.0)
        cov[name] = x
        y = y + 0.2 * x - 0.05 * x ** 2
        cols.append(Column(name, CONTINUOUS))
    w = rng.uniform(0.5, 2.0, n) if weights else np.ones(n)
    blocks = tuple(VariableBlock(c.name, (c.name,),
                                 {c.name: (0.0,)} if c.kind == CONTINUOUS else {})
                   for c in cols)
    schema = Schema("g", "y", tuple(cols), weight="w", blocks=blocks)
    return Dataset(g, y, w, cov, schema)
