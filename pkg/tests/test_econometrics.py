import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lstlab.econometrics import (BASE_REGRESSORS, ExactLeverageError, collinear, excess_regression, hc3_se, ols,
                                 pacf, premium_regression, rolling_sigma, select_lags, significance_stars, t_pvalue,
                                 vif)
from lstlab.errors import (InfiniteVifError, InsufficientObservationsError, SingularDesignError, ValidationError)
from lstlab.ingest import Panel

import synth

SHIFTS = [f"shift{i}" for i in range(1, 7)]


def design(rng, n, k):
    return np.column_stack([np.ones(n), rng.standard_normal((n, k - 1))])


def hc3_oracle(X, y):
    """HC3 by explicit sums over observations, independent of QR."""
    n, k = X.shape
    XtX = np.zeros((k, k))
    for i in range(n):
        XtX += np.outer(X[i], X[i])
    B = np.linalg.inv(XtX)
    beta = B @ sum(X[i] * y[i] for i in range(n))
    meat = np.zeros((k, k))
    for i in range(n):
        e = y[i] - X[i] @ beta
        h = X[i] @ B @ X[i]
        meat += np.outer(X[i], X[i]) * e * e / (1 - h) ** 2
    return np.sqrt(np.diag(B @ meat @ B))


# rolling sigma

def test_rolling_sigma_constant():
    assert np.all(rolling_sigma(np.full(40, 3.0)) == 0)


def test_rolling_sigma_alternating():
    x = np.array([1.0, -1.0] * 30)
    s = rolling_sigma(x)
    assert len(s) == 31
    assert np.allclose(s, math.sqrt(30 / 29), rtol=1e-12)
    assert s[0] == pytest.approx(1.01709, abs=1e-5)


def test_rolling_sigma_window2():
    assert np.allclose(rolling_sigma([1.0, 2.0, 3.0], 2), [math.sqrt(0.5)] * 2, rtol=1e-12)
    with pytest.raises(InsufficientObservationsError):
        rolling_sigma([1.0] * 29)


# OLS

def test_ols_exact_fit():
    x = np.arange(10.0)
    res = ols(np.column_stack([np.ones(10), x]), 1 + 2 * x)
    assert res.coef == pytest.approx([1.0, 2.0], abs=1e-12)
    assert res.r2 == 1.0
    assert np.all(res.se == 0)


def test_ols_orthogonal_response():
    x = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
    y = np.array([1.0, 0.0, -2.0, 0.0, 1.0])  # symmetric, orthogonal to centred x
    res = ols(np.column_stack([np.ones(5), x]), y)
    assert res.coef[1] == pytest.approx(0.0, abs=1e-14)


def test_ols_normal_equations_oracle():
    rng = np.random.default_rng(11)
    X = design(rng, 50, 3)
    y = X @ [0.5, -1.0, 2.0] + rng.standard_normal(50)
    res = ols(X, y)
    oracle = np.linalg.solve(X.T @ X, X.T @ y)
    assert np.allclose(res.coef, oracle, rtol=0, atol=1e-8)
    assert np.max(np.abs(X.T @ res.residuals)) / (np.linalg.norm(X) * np.linalg.norm(y)) < 1e-8
    assert res.adj_r2 <= res.r2


def test_ols_errors_name_columns():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(20)
    X = np.column_stack([np.ones(20), x, 2 * x])
    with pytest.raises(SingularDesignError) as ei:
        ols(X, rng.standard_normal(20), ["const", "a", "b"])
    assert ei.value.columns == ("b",) and "b" in str(ei.value)
    with pytest.raises(InsufficientObservationsError):
        ols(design(rng, 3, 3), np.ones(3))


def test_pvalue_matches_t_distribution():
    from scipy import stats
    for t, df in [(0.0, 5), (1.96, 1000), (2.5, 10), (-3.1, 40)]:
        assert t_pvalue(t, df) == pytest.approx(2 * stats.t.sf(abs(t), df), rel=1e-10)


# HC3

def test_hc3_worked_design():
    X = np.array([[1, 1.0], [1, 2.0], [1, 4.0], [1, 5.0], [1, 7.0], [1, 10.0]])
    y = np.array([1.2, 1.9, 4.4, 4.6, 7.9, 9.1])
    res = ols(X, y)
    assert np.allclose(res.se, hc3_oracle(X, y), rtol=0, atol=1e-12)
    assert np.allclose(hc3_se(X, y, res.residuals), res.se, rtol=0, atol=1e-15)


def test_hc3_monte_carlo_near_classical():
    rng = np.random.default_rng(2024)
    X = design(rng, 4000, 4)
    y = X @ [1.0, 0.5, -0.5, 0.0] + rng.standard_normal(4000)
    robust = ols(X, y).se
    classical = ols(X, y, hc3=False).se
    assert np.all(np.abs(robust / classical - 1) < 0.15)


def test_hc3_exact_leverage():
    X = np.column_stack([np.ones(5), [0, 0, 0, 0, 1.0]])
    with pytest.raises(ExactLeverageError):
        ols(X, np.array([1.0, 2.0, 1.5, 1.2, 9.0]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_hc3_row_order_invariance(seed):
    rng = np.random.default_rng(seed)
    X = design(rng, 30, 3)
    y = rng.standard_normal(30) * (1 + np.abs(X[:, 1]))
    perm = rng.permutation(30)
    assert np.allclose(ols(X, y).se, ols(X[perm], y[perm]).se, rtol=1e-10, atol=0)


# VIF

def test_vif_orthogonal():
    X = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]] * 3, dtype=float)
    v = vif(X, ["a", "b", "c"])
    assert all(abs(x - 1) < 1e-9 for x in v.values())


def test_vif_duplicate_raises():
    x = np.random.default_rng(0).standard_normal((40, 2))
    with pytest.raises(InfiniteVifError) as ei:
        vif(np.column_stack([x, x[:, 0]]), ["a", "b", "c"])
    assert isinstance(ei.value, SingularDesignError) and "c" in str(ei.value)


def test_vif_near_duplicate_flagged():
    rng = np.random.default_rng(1)
    x1 = rng.standard_normal(500)
    x2 = x1 + 0.1 * rng.standard_normal(500)  # R^2 near 1/1.01, VIF near 101
    v = vif(np.column_stack([x1, x2, rng.standard_normal(500)]), ["x1", "x2", "x3"])
    assert v["x2"] > 10 and 50 < v["x2"] < 200
    assert collinear(v) == ["x1", "x2"]


# PACF and lag selection

def test_pacf_lag1_is_regression_coefficient():
    y = synth.ar2(5, 300)
    direct = ols(np.column_stack([np.ones(299), y[:-1]]), y[1:]).coef[1]
    assert pacf(y, 3).values[0] == pytest.approx(direct, rel=1e-12)


def test_pacf_band_and_errors():
    res = pacf(np.random.default_rng(0).standard_normal(400))
    assert res.band == pytest.approx(1.96 / 20)
    with pytest.raises(InsufficientObservationsError):
        pacf(np.ones(7), 6)


def test_pacf_white_noise():
    # per-lag rate: all six lags inside jointly happens only ~0.95^6 of the time
    inside = np.array([~pacf(np.random.default_rng(s).standard_normal(5000)).significant for s in range(100)])
    assert np.all(inside.mean(axis=0) >= 0.90)


def test_pacf_ar1():
    hits = 0
    for s in range(100):
        r = pacf(synth.ar_premium(np.random.default_rng(s), 10_000, (0.8,)), 2)
        hits += 0.77 <= r.values[0] <= 0.83 and abs(r.values[1]) < r.band
    assert hits >= 90


def test_select_lags_examples():
    assert select_lags([0.01] * 6, 0.05) == 0
    assert select_lags([0.5, 0.3, 0.0, 0.0, 0.0, 0.0], 0.05) == 2
    assert select_lags([0.0] * 5 + [0.2], 0.05) == 6
    with pytest.raises(ValidationError):
        select_lags([0.1] * 3, 0.05)


@pytest.mark.parametrize("p,stars", [(0.009, "***"), (0.01, "**"), (0.049, "**"), (0.05, "*"), (0.0999, "*"),
                                     (0.1, ""), (0.5, "")])
def test_stars(p, stars):
    assert significance_stars(p) == stars


def test_stars_out_of_range():
    with pytest.raises(ValidationError):
        significance_stars(1.5)


# Properties

@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_r2_monotone_in_regressors(seed):
    rng = np.random.default_rng(seed)
    X = design(rng, 40, 3)
    y = rng.standard_normal(40)
    small, big = ols(X, y), ols(np.column_stack([X, rng.standard_normal(40)]), y)
    assert big.r2 >= small.r2 - 1e-12
    assert 0 <= small.r2 <= 1 and small.adj_r2 <= small.r2


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([4.0, 0.25, 3.7, 1e3]))
def test_scale_equivariance(seed, c):
    rng = np.random.default_rng(seed)
    X = design(rng, 40, 3)
    y = X @ [0.1, 0.5, 0.0] + rng.standard_normal(40)
    Xc = X.copy()
    Xc[:, 1] *= c
    a, b = ols(X, y), ols(Xc, y)
    assert b.coef[1] == pytest.approx(a.coef[1] / c, rel=1e-10)
    assert b.se[1] == pytest.approx(a.se[1] / c, rel=1e-10)
    assert np.allclose(b.tstat, a.tstat, rtol=1e-10)
    assert b.stars == a.stars and b.r2 == pytest.approx(a.r2, rel=1e-12)


# Per-token panel models

def test_excess_null_model():
    rejections, covered = 0, np.zeros(6)
    for s in range(100):
        res = excess_regression(synth.excess_panel(s, 300), "tok")
        rejections += res.wald_zero()[1] < 0.05
        covered += np.abs(res.tstat) < 1.96
    assert rejections <= 10
    assert np.all(covered >= 90)


def test_excess_recovers_delta_coefficient():
    res = excess_regression(synth.excess_panel(3, 400, beta_delta=0.025), "tok")
    b, se = res["delta_daily"]
    assert abs(b - 0.025) < 2 * se
    assert res.names == ("const",) + BASE_REGRESSORS
    assert set(res.vif) == set(BASE_REGRESSORS)


def test_excess_accepts_87_rows():
    res = excess_regression(synth.excess_panel(0, 87), "tok")
    assert res.nobs == 87


def test_missing_column_is_named():
    p = synth.excess_panel(0, 50)
    cols = {k: v for k, v in p.columns.items() if k != "tok:volume"}
    from lstlab.errors import DataError
    with pytest.raises(DataError, match="tok:volume"):
        excess_regression(Panel(p.dates, cols), "tok")


def test_premium_recovery_and_nobs():
    res = premium_regression(synth.premium_panel(1, 501, (0.491, 0.266, 0.090)), "tok")
    assert res.nobs == 495
    for name, true in zip(SHIFTS, (0.491, 0.266, 0.090, 0, 0, 0)):
        b, se = res[name]
        assert abs(b - true) < 2 * se, name
    assert res.metadata["selected_lag"] >= 2


def test_premium_white_noise_shifts_zero():
    rejections = sum(
        premium_regression(synth.premium_panel(s, 501, ()), "tok").wald_zero(SHIFTS)[1] < 0.05 for s in range(100)
    )
    assert rejections <= 10


def test_premium_always_six_lags():
    res = premium_regression(synth.premium_panel(2, 300, ()), "tok")
    assert [n for n in res.names if n.startswith("shift")] == SHIFTS


def test_constant_premium_is_singular():
    p = synth.premium_panel(0, 100, ())
    cols = dict(p.columns)
    cols["tok:premium"] = np.full(100, 0.7)
    with pytest.raises(SingularDesignError):
        premium_regression(Panel(p.dates, cols), "tok")


def test_premium_lags0_equals_excess_on_premium():
    p = synth.premium_panel(4, 200, (0.5,))
    cols = dict(p.columns)
    cols["tok:xs"] = cols["tok:premium"]
    a = premium_regression(p, "tok", lags=0)
    b = excess_regression(Panel(p.dates, cols), "tok")
    assert np.allclose(a.coef, b.coef, rtol=0, atol=1e-12)
    with pytest.raises(ValidationError):
        premium_regression(p, "tok", lags=7)


def test_matches_statsmodels():
    sm = pytest.importorskip("statsmodels.api")
    from statsmodels.stats.outliers_influence import variance_inflation_factor
    from statsmodels.tsa.stattools import pacf as sm_pacf

    rng = np.random.default_rng(99)
    X = design(rng, 120, 4)
    y = X @ [0.2, 1.0, -0.5, 0.0] + rng.standard_normal(120) * (1 + X[:, 1] ** 2)
    ref = sm.OLS(y, X).fit(cov_type="HC3")
    res = ols(X, y)
    assert np.allclose(res.coef, ref.params, rtol=1e-10)
    assert np.allclose(res.se, ref.bse, rtol=1e-10)
    assert res.r2 == pytest.approx(ref.rsquared, rel=1e-12)
    assert res.adj_r2 == pytest.approx(ref.rsquared_adj, rel=1e-12)
    ours = vif(X[:, 1:], ["a", "b", "c"])
    assert [ours[k] for k in "abc"] == pytest.approx([variance_inflation_factor(X, j) for j in (1, 2, 3)], rel=1e-10)
    z = synth.ar2(1, 800)
    assert pacf(z, 6).values == pytest.approx(sm_pacf(z, 6, method="ols")[1:], rel=1e-8, abs=1e-12)
