"""Gaussian LASSO and logit-LASSO paths with K-fold cross-validation.

Both families minimise a weighted mean loss plus ``lam * ||b||_1`` over
columns standardised to weighted mean 0 and standard deviation 1; the
intercept is never penalised. The Gaussian loss is half the weighted mean
squared error, so that for a single standardised regressor the solution is
the soft-threshold ``sign(rho) * max(|rho| - lam, 0)`` of the weighted
covariance ``rho``. The Binomial loss is the weighted mean negative
log-likelihood.

Solvers work on the (weighted) Gram matrix, so a coordinate-descent sweep
costs O(p^2) regardless of the row count. Logit-LASSO minimises a sequence
of quadratic majorisers built from the bounded logistic curvature, with
safeguarded Newton steps once the majoriser stalls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numba
import numpy as np
from scipy.special import expit

from .data import Dataset, DesignMatrix, ModelSpec, build_design
from .linmod import BINOMIAL, ETA_CLIP, GAUSSIAN, FitResult, fit_logit, fit_wls

LAMBDA_MIN = "lambda_min"
LAMBDA_1SE = "lambda_1se"


@numba.njit(cache=True)
def _active_set_solve(H, q, beta, lam, pf):
    """Exact minimiser for the current sign pattern, if it satisfies the KKT conditions.

    Solves ``H_AA b_A = q_A - lam * pf_A * sign(b_A)`` on the nonzero set A and
    accepts the result when no sign flips and every zero coordinate keeps
    ``|q_j - (H b)_j| <= lam * pf_j``. Writes into ``beta`` only on success.
    """
    p = beta.shape[0]
    idx = np.flatnonzero(beta != 0.0)
    m = idx.shape[0]
    if m == 0:
        return False
    A = np.empty((m, m))
    rhs = np.empty(m)
    for a in range(m):
        ja = idx[a]
        rhs[a] = q[ja] - lam * pf[ja] * np.sign(beta[ja])
        for b in range(m):
            A[a, b] = H[ja, idx[b]]
    try:
        sol = np.linalg.solve(A, rhs)
    except Exception:
        return False
    cand = np.zeros(p)
    for a in range(m):
        ja = idx[a]
        if not np.isfinite(sol[a]):
            return False
        if pf[ja] > 0.0 and sol[a] * beta[ja] <= 0.0:
            return False
        cand[ja] = sol[a]
    r = q - H @ cand
    for j in range(p):
        if cand[j] == 0.0 and abs(r[j]) > lam * pf[j] * (1.0 + 1e-9) + 1e-15:
            return False
    beta[:] = cand
    return True


@numba.njit(cache=True)
def _cd_quadratic(H, q, beta, lam, pf, tol, max_sweeps):
    """Coordinate descent for 0.5 b'Hb - q'b + lam * sum(pf * |b|). In place.

    Cyclic sweeps alternate between all coordinates and the active set. On
    strongly correlated designs plain sweeps converge slowly, so every few
    sweeps an exact solve on the current sign pattern is attempted; it ends
    the descent when it passes the optimality check.
    """
    p = beta.shape[0]
    r = q - H @ beta
    sweeps = 0
    active_only = False
    while sweeps < max_sweeps:
        sweeps += 1
        max_change = 0.0
        for j in range(p):
            if active_only and beta[j] == 0.0:
                continue
            hjj = H[j, j]
            if hjj <= 0.0:
                continue
            old = beta[j]
            u = r[j] + hjj * old
            t = lam * pf[j]
            if u > t:
                new = (u - t) / hjj
            elif u < -t:
                new = (u + t) / hjj
            else:
                new = 0.0
            if new != old:
                d = new - old
                beta[j] = new
                for k in range(p):
                    r[k] -= H[k, j] * d
                ch = abs(d) * math.sqrt(hjj)
                if ch > max_change:
                    max_change = ch
        if max_change < tol:
            if not active_only:
                break
            active_only = False
        else:
            active_only = True
            if sweeps % 8 == 0 and _active_set_solve(H, q, beta, lam, pf):
                break
    return sweeps


class LassoError(ValueError):
    pass


@dataclass(frozen=True)
class LassoConfig:
    n_lambda: int = 100
    folds: int = 5
    seed: int = 0
    lambda_min_ratio: float = 1e-4
    rule: str = LAMBDA_1SE


@dataclass(frozen=True, eq=False)
class LassoPath:
    """Solutions along a decreasing lambda grid, in original column units."""

    family: str
    names: tuple[str, ...]
    lambdas: np.ndarray
    intercepts: np.ndarray
    coefs: np.ndarray                 # (n_lambda, p)
    cv_mean: np.ndarray | None = None
    cv_se: np.ndarray | None = None
    idx_min: int | None = None
    idx_1se: int | None = None
    info: dict = field(default_factory=dict)

    @property
    def selected_lambda_min(self) -> float:
        return float(self.lambdas[self.idx_min])

    @property
    def selected_lambda_1se(self) -> float:
        return float(self.lambdas[self.idx_1se])

    def index(self, at: str | int) -> int:
        if isinstance(at, (int, np.integer)):
            return int(at)
        if self.idx_min is None:
            raise LassoError("path has no cross-validation results")
        return self.idx_min if at == LAMBDA_MIN else self.idx_1se

    def support(self, at: str | int = LAMBDA_1SE) -> tuple[str, ...]:
        k = self.index(at)
        return tuple(n for n, c in zip(self.names, self.coefs[k]) if c != 0.0)

    def fit_at(self, at: str | int = LAMBDA_1SE) -> FitResult:
        """Penalised solution at a grid point, as a :class:`FitResult`."""
        k = self.index(at)
        coef = {n: float(c) for n, c in zip(self.names, self.coefs[k]) if c != 0.0}
        return FitResult(float(self.intercepts[k]), coef, self.family,
                         int(self.info.get("n_obs", 0)), float("nan"), (),
                         {"lambda": float(self.lambdas[k])})


# -- solvers on standardised data ----------------------------------------------

@dataclass
class _Std:
    mean: np.ndarray
    sd: np.ndarray
    Xs: np.ndarray
    v: np.ndarray        # normalised weights (sum 1)


def _standardize(X: np.ndarray, w: np.ndarray) -> _Std:
    v = w / w.sum()
    mean = v @ X
    Xc = X - mean
    sd = np.sqrt(v @ (Xc * Xc))
    ok = sd > 1e-12 * np.maximum(1.0, np.abs(mean))
    safe = np.where(ok, sd, 1.0)
    Xs = Xc / safe
    Xs[:, ~ok] = 0.0
    return _Std(mean, np.where(ok, sd, 0.0), Xs, v)


def _to_original(st: _Std, a_std: float, b_std: np.ndarray) -> tuple[float, np.ndarray]:
    coef = np.divide(b_std, st.sd, out=np.zeros_like(b_std), where=st.sd > 0)
    return a_std - float(st.mean @ coef), coef


def _gaussian_solve(st: _Std, y: np.ndarray, lambdas: np.ndarray, tol: float = 1e-12,
                    max_sweeps: int = 100000):
    """Returns (intercepts, std-scale coefs) along ``lambdas``."""
    ybar = float(st.v @ y)
    yc = y - ybar
    H = st.Xs.T @ (st.Xs * st.v[:, None])
    q = st.Xs.T @ (st.v * yc)
    p = H.shape[0]
    pf = np.ones(p)
    b = np.zeros(p)
    out = np.zeros((lambdas.shape[0], p))
    for k, lam in enumerate(lambdas):
        _cd_quadratic(H, q, b, float(lam), pf, tol, max_sweeps)
        out[k] = b
    return np.full(lambdas.shape[0], ybar), out


def _gaussian_lambda_max(st: _Std, y: np.ndarray) -> float:
    yc = y - st.v @ y
    return float(np.max(np.abs(st.Xs.T @ (st.v * yc)), initial=0.0))


def _logit_lambda_max(st: _Std, g: np.ndarray) -> float:
    gbar = st.v @ g
    return float(np.max(np.abs(st.Xs.T @ (st.v * (g - gbar))), initial=0.0))


def _logit_solve(st: _Std, g: np.ndarray, lambdas: np.ndarray, kkt_tol: float = 1e-8,
                 max_outer: int = 2000, mm_steps: int = 5):
    """Majorise-minimise along ``lambdas``, switching to proximal Newton when slow.

    The logistic Hessian is bounded above by ``X'VX / 4``, so a step that
    minimises this fixed quadratic majoriser by coordinate descent always
    decreases the objective. That bound is loose when fitted probabilities
    approach 0 or 1, so after ``mm_steps`` iterations at one penalty the
    solver tries proximal-Newton steps on the exact Hessian and keeps one
    only if it lowers the penalised objective, otherwise it takes the
    majoriser step. Iterates until the KKT violation (intercept score and
    penalised subgradient) is below ``kkt_tol``.
    """
    Xs, v = st.Xs, st.v
    n, p = Xs.shape
    gbar = float(v @ g)
    gbar = min(max(gbar, 1e-12), 1 - 1e-12)
    beta = np.zeros(p + 1)
    beta[0] = math.log(gbar / (1 - gbar))
    eta = beta[0] + Xs @ beta[1:]
    pf = np.ones(p + 1)
    pf[0] = 0.0
    H = np.empty((p + 1, p + 1))
    H[0, 0] = v.sum()
    H[0, 1:] = H[1:, 0] = v @ Xs
    H[1:, 1:] = Xs.T @ (Xs * v[:, None])
    H *= 0.25
    H += 1e-12 * np.eye(p + 1)
    Xa = np.hstack([np.ones((n, 1)), Xs])

    def objective(b: np.ndarray, e: np.ndarray, lam: float) -> float:
        return float(v @ (np.logaddexp(0.0, e) - g * e)) + lam * float(np.abs(b[1:]).sum())
    intercepts = np.zeros(lambdas.shape[0])
    coefs = np.zeros((lambdas.shape[0], p))
    grad = np.empty(p + 1)
    unconverged = 0
    for k, lam in enumerate(lambdas):
        lam = float(lam)
        converged = False
        for it in range(max_outer):
            mu = expit(eta)
            resid = v * (mu - g)
            grad[0] = resid.sum()
            grad[1:] = Xs.T @ resid
            b = beta[1:]
            gb = grad[1:]
            viol = np.where(b == 0.0, np.maximum(np.abs(gb) - lam, 0.0),
                            np.abs(gb + lam * np.sign(b)))
            if max(abs(grad[0]), float(viol.max(initial=0.0))) < kkt_tol:
                converged = True
                break
            if it >= mm_steps:
                Hn = Xa.T @ (Xa * (v * mu * (1.0 - mu))[:, None])
                Hn += 1e-12 * np.eye(p + 1)
                new = beta.copy()
                _cd_quadratic(Hn, Hn @ beta - grad, new, lam, pf, 1e-14, 100000)
                new_eta = new[0] + Xs @ new[1:]
                if objective(new, new_eta, lam) < objective(beta, eta, lam):
                    beta, eta = new, new_eta
                    continue
            new = beta.copy()
            _cd_quadratic(H, H @ beta - grad, new, lam, pf, 1e-14, 100000)
            if np.array_equal(new, beta):
                break        # rounding floor: the majoriser no longer moves
            beta = new
            eta = beta[0] + Xs @ beta[1:]
        if not converged:
            unconverged += 1
        intercepts[k] = beta[0]
        coefs[k] = beta[1:]
    return intercepts, coefs, unconverged


# -- public API ------------------------------------------------------------------

def _check_inputs(X: DesignMatrix, y, w):
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if X.row_count != y.shape[0] or w.shape[0] != y.shape[0]:
        raise LassoError("X, y and w are not aligned")
    return y, w


def lambda_max(X: DesignMatrix, y, w, family: str) -> float:
    """Smallest penalty at which every penalised coefficient is exactly zero."""
    y, w = _check_inputs(X, y, w)
    st = _standardize(X.values, w)
    return _gaussian_lambda_max(st, y) if family == GAUSSIAN else _logit_lambda_max(st, y)


def solve_path(X: DesignMatrix, y, w, family: str, lambdas) -> LassoPath:
    """Solutions on a given decreasing grid; no cross-validation."""
    y, w = _check_inputs(X, y, w)
    lambdas = np.asarray(lambdas, dtype=float)
    if np.any(np.diff(lambdas) > 0):
        raise LassoError("lambda grid must be decreasing")
    st = _standardize(X.values, w)
    info: dict = {"n_obs": y.shape[0]}
    if family == GAUSSIAN:
        a_std, b_std = _gaussian_solve(st, y, lambdas)
    elif family == BINOMIAL:
        if not (np.any(y == 1) and np.any(y == 0)):
            raise LassoError("logit-LASSO needs both classes")
        a_std, b_std, unconv = _logit_solve(st, y, lambdas)
        info["unconverged"] = unconv
    else:
        raise LassoError(f"unknown family {family!r}")
    coefs = np.zeros_like(b_std)
    intercepts = np.zeros(lambdas.shape[0])
    for k in range(lambdas.shape[0]):
        intercepts[k], coefs[k] = _to_original(st, float(a_std[k]), b_std[k])
    return LassoPath(family, X.names, lambdas, intercepts, coefs, info=info)


def lambda_grid(lam_max: float, n_lambda: int, min_ratio: float) -> np.ndarray:
    if lam_max <= 0:
        lam_max = 1e-12
    return lam_max * np.logspace(0.0, np.log10(min_ratio), n_lambda)


def cv_folds(y: np.ndarray, folds: int, seed: int, stratify: bool) -> np.ndarray:
    """Seeded fold labels; ``stratify`` balances the two classes of a binary target."""
    rng = np.random.default_rng(seed)
    n = y.shape[0]
    fold = np.empty(n, dtype=np.int64)
    if stratify:
        offset = 0
        for cls in (0.0, 1.0):
            idx = np.flatnonzero(y == cls)
            idx = idx[rng.permutation(idx.shape[0])]
            fold[idx] = (np.arange(idx.shape[0]) + offset) % folds
            offset += idx.shape[0]
    else:
        fold[rng.permutation(n)] = np.arange(n) % folds
    return fold


def _path_predict(path: LassoPath, Xv: np.ndarray) -> np.ndarray:
    return path.intercepts[None, :] + Xv @ path.coefs.T


def fit_lasso_path(X: DesignMatrix, y, w, family: str = GAUSSIAN, n_lambda: int = 100,
                   folds: int = 5, seed: int = 0, lambda_min_ratio: float = 1e-4) -> LassoPath:
    """LASSO path with ``folds``-fold cross-validation and the one-SE rule.

    The grid runs log-evenly from lambda_max down to ``lambda_min_ratio *
    lambda_max``. CV error is the weighted MSE (Gaussian) or weighted
    deviance (Binomial); its standard error is the standard deviation of the
    per-fold errors over ``sqrt(folds)``. ``lambda_1se`` is the largest
    penalty whose CV error is within one standard error of the minimum.
    """
    y, w = _check_inputs(X, y, w)
    n = y.shape[0]
    if n_lambda < 2:
        raise LassoError("n_lambda must be >= 2")
    if folds < 2:
        raise LassoError("folds must be >= 2")
    if folds > n:
        raise LassoError("more folds than rows")
    lam = lambda_grid(lambda_max(X, y, w, family), n_lambda, lambda_min_ratio)
    full = solve_path(X, y, w, family, lam)
    fold = cv_folds(y, folds, seed, stratify=family == BINOMIAL)
    errs = np.zeros((folds, n_lambda))
    for k in range(folds):
        test = fold == k
        train = ~test
        if family == BINOMIAL and len(np.unique(y[train])) < 2:
            raise LassoError("a CV training fold contains a single class")
        fp = solve_path(X.rows(train), y[train], w[train], family, lam)
        pred = _path_predict(fp, X.values[test])
        wt = w[test] / w[test].sum()
        if family == GAUSSIAN:
            errs[k] = wt @ (y[test][:, None] - pred) ** 2
        else:
            eta = np.clip(pred, -ETA_CLIP, ETA_CLIP)
            yt = y[test][:, None]
            ll = yt * -np.logaddexp(0, -eta) + (1 - yt) * -np.logaddexp(0, eta)
            errs[k] = -2 * (wt @ ll)
    cv_mean = errs.mean(axis=0)
    cv_se = errs.std(axis=0, ddof=1) / np.sqrt(folds)
    idx_min = int(np.argmin(cv_mean))
    within = np.flatnonzero(cv_mean <= cv_mean[idx_min] + cv_se[idx_min])
    idx_1se = int(within.min())
    info = dict(full.info)
    info["folds"] = folds
    return replace(full, cv_mean=cv_mean, cv_se=cv_se, idx_min=idx_min, idx_1se=idx_1se, info=info)


def fit_lasso_at(X: DesignMatrix, y, w, family: str, lam: float, n_steps: int = 20) -> LassoPath:
    """Solution at a fixed penalty, reached by a short warm-started path.

    The returned path's last grid point is ``lam``; ``idx_min``/``idx_1se``
    both point at it so that downstream code can treat it like a CV path.
    """
    y, w = _check_inputs(X, y, w)
    lmax = lambda_max(X, y, w, family)
    if lam >= lmax:
        grid = np.array([lam])
    else:
        grid = np.geomspace(lmax, lam, n_steps)
        grid[-1] = lam
    path = solve_path(X, y, w, family, grid)
    last = grid.shape[0] - 1
    return replace(path, idx_min=last, idx_1se=last)


def post_lasso_refit(path: LassoPath, at: str | int, X: DesignMatrix, y, w) -> FitResult:
    """Unpenalised refit on the columns selected at ``at``."""
    cols = path.support(at)
    Xs = X.select(cols)
    if path.family == GAUSSIAN:
        fit = fit_wls(Xs, y, w)
    else:
        fit = fit_logit(Xs, y, w)
    return replace(fit, info={**fit.info, "lambda": float(path.lambdas[path.index(at)]),
                              "n_selected": len(cols)})


def kkt_violation(path: LassoPath, k: int, X: DesignMatrix, y, w) -> float:
    """Largest KKT violation of grid point ``k`` on standardised columns.

    For a zero coefficient the excess of ``|score|`` over lambda counts; for
    a nonzero one the distance of the score from ``lambda * sign``.
    """
    y, w = _check_inputs(X, y, w)
    st = _standardize(X.values, w)
    eta = path.intercepts[k] + X.values @ path.coefs[k]
    mu = eta if path.family == GAUSSIAN else expit(eta)
    score = st.Xs.T @ (st.v * (y - mu))
    b_std = path.coefs[k] * st.sd
    lam = path.lambdas[k]
    nz = b_std != 0.0
    viol = np.where(nz, np.abs(score - lam * np.sign(b_std)), np.maximum(np.abs(score) - lam, 0.0))
    int_score = abs(float(st.v @ (y - mu)))
    return float(max(viol.max(initial=0.0), int_score))


def lasso_fitter(family: str, cfg: LassoConfig, frozen_lambda: float | None = None,
                 record: Callable[[float], None] | None = None) -> Callable[..., FitResult]:
    """Nuisance fitter for the ML regime.

    Gaussian targets get the post-LASSO refit at the selected penalty,
    Binomial targets the penalised logit prediction. With ``frozen_lambda``
    the cross-validation is skipped.
    """

    def fit(X: DesignMatrix, y, w) -> FitResult:
        if frozen_lambda is not None:
            path = fit_lasso_at(X, y, w, family, frozen_lambda)
            at = path.idx_1se
        else:
            path = fit_lasso_path(X, y, w, family, cfg.n_lambda, cfg.folds, cfg.seed,
                                  cfg.lambda_min_ratio)
            at = cfg.rule
        if record is not None:
            record(float(path.lambdas[path.index(at)]))
        if family == GAUSSIAN:
            return post_lasso_refit(path, at, X, y, w)
        res = path.fit_at(at)
        return replace(res, n_obs=len(y), info={**res.info, "n_selected": len(res.coefficients)})

    return fit


def pds_select(data: Dataset, spec_full: ModelSpec, cfg: LassoConfig = LassoConfig(),
               X: DesignMatrix | None = None, frozen: dict | None = None,
               record: dict | None = None) -> tuple[str, ...]:
    """Union of the columns picked by a wage LASSO and a group LASSO.

    Both are Gaussian LASSOs on the pooled sample of both groups; the group
    indicator is never a candidate. Columns are returned in design order.
    """
    if X is None:
        X = build_design(data, spec_full)
    chosen: set[str] = set()
    for key, target in (("pds_y", data.outcome), ("pds_g", data.group.astype(float))):
        lam = None if frozen is None else frozen.get(key)
        if lam is not None:
            path = fit_lasso_at(X, target, data.weight, GAUSSIAN, lam)
            at: str | int = path.idx_1se
        else:
            path = fit_lasso_path(X, target, data.weight, GAUSSIAN, cfg.n_lambda, cfg.folds,
                                  cfg.seed, cfg.lambda_min_ratio)
            at = cfg.rule
        if record is not None:
            record[key] = float(path.lambdas[path.index(at)])
        chosen.update(path.support(at))
    return tuple(n for n in X.names if n in chosen)
