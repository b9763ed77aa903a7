import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from paygap.data import (BASELINE, CONTINUOUS, Column, Dataset, DesignMatrix, DummyExpansion,
                         ModelSpec, Polynomial, Schema, build_design)
from paygap.linmod import (BINOMIAL, GAUSSIAN, FitError, fit_logit, fit_wls,
                           oos_prediction_power, predict)


def _X(*cols, names=None) -> DesignMatrix:
    v = np.column_stack(cols) if cols else np.zeros((0, 0))
    return DesignMatrix(v, tuple(names or (f"x{i}" for i in range(v.shape[1]))))


# -- fit_wls ------------------------------------------------------------------

def test_wls_exact_line():
    x = np.array([0.0, 1, 2, 3, 4])
    fit = fit_wls(_X(x), 2 + 3 * x, np.ones(5))
    assert fit.intercept == pytest.approx(2, abs=1e-10)
    assert fit.coefficients["x0"] == pytest.approx(3, abs=1e-10)
    assert predict(fit, _X(np.array([10.0])))[0] == pytest.approx(32, abs=1e-9)


def test_wls_constant_outcome():
    x = np.random.default_rng(0).normal(size=(20, 3))
    fit = fit_wls(_X(*x.T), np.full(20, 5.0), np.ones(20))
    assert fit.intercept == pytest.approx(5, abs=1e-12)
    assert all(abs(c) < 1e-12 for c in fit.coefficients.values())


def test_wls_replication_oracle():
    x = np.array([0.0, 1, 2, 5])
    y = np.array([1.0, 0.5, 2.5, 4.0])
    fit = fit_wls(_X(x), y, np.array([1, 1, 1, 100.0]))
    xr = np.r_[x[:3], np.full(100, x[3])]
    yr = np.r_[y[:3], np.full(100, y[3])]
    ref = fit_wls(_X(xr), yr, np.ones(103))
    assert fit.intercept == pytest.approx(ref.intercept, abs=1e-8)
    assert fit.coefficients["x0"] == pytest.approx(ref.coefficients["x0"], abs=1e-8)


def test_wls_too_few_rows():
    with pytest.raises(FitError):
        fit_wls(_X(np.array([1.0])), np.array([1.0]), np.ones(1))


def test_wls_rank_deficient_keeps_estimable_fit():
    rng = np.random.default_rng(3)
    x = rng.normal(size=50)
    y = 1 + x + rng.normal(size=50)
    fit = fit_wls(_X(x, 2 * x), y, np.ones(50))
    ref = fit_wls(_X(x), y, np.ones(50))
    assert "rank_deficient" in fit.flags
    Xd = _X(x, 2 * x)
    np.testing.assert_allclose(predict(fit, Xd), predict(ref, _X(x)), atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_wls_closed_form(seed, p):
    rng = np.random.default_rng(seed)
    n = 3 * p + 10
    X = rng.normal(size=(n, p))
    y = X @ rng.normal(size=p) + rng.normal(size=n)
    w = rng.uniform(0.2, 3.0, n)
    A = np.column_stack([np.ones(n), X])
    ref = np.linalg.inv(A.T @ (A * w[:, None])) @ (A.T @ (w * y))
    fit = fit_wls(_X(*X.T), y, w)
    got = np.r_[fit.intercept, [fit.coefficients[f"x{i}"] for i in range(p)]]
    np.testing.assert_allclose(got, ref, rtol=1e-8, atol=1e-8)
    resid = y - predict(fit, _X(*X.T))
    assert np.max(np.abs(A.T @ (w * resid))) <= 1e-8 * max(1.0, np.abs(A.T @ (w * y)).max())


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-4, 1e4))
def test_wls_weight_scaling(seed, c):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(40, 4))
    y = rng.normal(size=40)
    w = rng.uniform(0.5, 2, 40)
    a = fit_wls(_X(*X.T), y, w)
    b = fit_wls(_X(*X.T), y, w * c)
    assert b.intercept == pytest.approx(a.intercept, abs=1e-10)
    for k in a.coefficients:
        assert b.coefficients[k] == pytest.approx(a.coefficients[k], abs=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_saturated_design_reproduces_cell_means(seed):
    rng = np.random.default_rng(seed)
    codes = rng.integers(0, 5, 120)
    codes[:5] = np.arange(5)
    y = rng.normal(size=120)
    w = rng.uniform(0.1, 5, 120)
    data = Dataset(np.zeros(120, dtype=int), y, w, {"c": codes})
    X = build_design(data, ModelSpec(BASELINE, (DummyExpansion("c"),)))
    fitted = predict(fit_wls(X, y, w), X)
    for k in range(5):
        sel = codes == k
        np.testing.assert_allclose(fitted[sel], w[sel] @ y[sel] / w[sel].sum(), atol=1e-9)


# -- fit_logit ----------------------------------------------------------------

def test_logit_2x2_closed_form():
    # p(g=1|x=0) = .25 and p(g=1|x=1) = .75 -> slope log(3) - log(1/3) = log 9
    x = np.r_[np.zeros(4), np.ones(4)]
    g = np.array([1, 0, 0, 0, 1, 1, 1, 0.0])
    fit = fit_logit(_X(x), g, np.ones(8))
    assert fit.coefficients["x0"] == pytest.approx(np.log(9), abs=1e-6)
    assert fit.intercept == pytest.approx(np.log(1 / 3), abs=1e-6)


def test_logit_null_model():
    x = np.tile([0.0, 1.0], 50)
    g = np.tile([1.0, 1.0, 0.0, 0.0], 25)      # equal shares at x=0 and x=1
    fit = fit_logit(_X(x), g, np.ones(100))
    assert fit.coefficients["x0"] == pytest.approx(0, abs=1e-6)
    assert fit.intercept == pytest.approx(0, abs=1e-6)


def test_logit_separation_flagged():
    x = np.arange(10.0)
    g = (x >= 5).astype(float)
    fit = fit_logit(_X(x), g, np.ones(10))
    assert "separation" in fit.flags or "not_converged" in fit.flags
    p = predict(fit, _X(x))
    assert np.all((p > 0) & (p < 1))


def test_logit_single_class():
    with pytest.raises(FitError):
        fit_logit(_X(np.arange(4.0)), np.ones(4), np.ones(4))


def test_predict_midpoint_and_missing_column():
    fit = fit_logit(_X(np.r_[np.zeros(4), np.ones(4)]), np.array([1, 0, 0, 0, 1, 1, 1, 0.0]),
                    np.ones(8))
    assert predict(fit, _X(np.array([0.5]))) == pytest.approx(0.5, abs=1e-6)
    with pytest.raises(FitError):
        predict(fit, _X(np.array([0.5]), names=["other"]))


def test_predict_intercept_only_constant():
    fit = fit_wls(DesignMatrix(np.zeros((4, 0)), ()), np.array([1.0, 2, 3, 4]), np.ones(4))
    assert predict(fit, DesignMatrix(np.zeros((3, 0)), ())).tolist() == [2.5] * 3


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_logit_score_at_convergence(seed):
    rng = np.random.default_rng(seed)
    n = 400
    X = rng.normal(size=(n, 3))
    g = (rng.random(n) < 1 / (1 + np.exp(-(X @ [0.5, -1, 0.3])))).astype(float)
    w = rng.uniform(0.5, 2, n)
    fit = fit_logit(_X(*X.T), g, w)
    p = predict(fit, _X(*X.T))
    A = np.column_stack([np.ones(n), X])
    assert np.max(np.abs(A.T @ (w * (g - p)))) < 1e-6 * n


# -- out-of-sample power ------------------------------------------------------

def _continuous(x, y) -> Dataset:
    n = y.shape[0]
    schema = Schema("g", "y", (Column("x", CONTINUOUS),))
    return Dataset(np.zeros(n, dtype=int), y, None, {"x": x}, schema)


def test_oos_pure_noise():
    rng = np.random.default_rng(1)
    data = _continuous(rng.normal(size=10_000), rng.normal(size=10_000))
    spec = ModelSpec(BASELINE, (Polynomial("x", 2),))
    assert oos_prediction_power(data, spec, GAUSSIAN) <= 0.02


def test_oos_noiseless():
    x = np.random.default_rng(2).normal(size=500)
    data = _continuous(x, 1 + x - 0.5 * x ** 2)
    spec = ModelSpec(BASELINE, (Polynomial("x", 2),))
    assert oos_prediction_power(data, spec, GAUSSIAN) >= 0.999


def test_oos_half_signal():
    rng = np.random.default_rng(3)
    x = rng.normal(size=50_000)
    data = _continuous(x, x + rng.normal(size=50_000))
    spec = ModelSpec(BASELINE, (Polynomial("x", 1),))
    assert 0.45 <= oos_prediction_power(data, spec, GAUSSIAN) <= 0.55


def test_oos_binomial_loglik_negative():
    rng = np.random.default_rng(4)
    x = rng.normal(size=2000)
    g = (rng.random(2000) < 1 / (1 + np.exp(-x))).astype(int)
    schema = Schema("g", "y", (Column("x", CONTINUOUS),))
    data = Dataset(g, np.zeros(2000), None, {"x": x}, schema)
    ll = oos_prediction_power(data, ModelSpec(BASELINE, (Polynomial("x", 1),)), BINOMIAL)
    assert np.log(0.5) < ll < 0
