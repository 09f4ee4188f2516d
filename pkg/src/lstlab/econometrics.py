"""Excess-return and premium regressions.

OLS is solved by Householder QR. Standard errors are HC3
(heteroskedasticity-consistent, squared residuals scaled by
``(1 - h_ii) ** -2``). Two-sided p-values come from the Student-t
distribution with ``n - k`` degrees of freedom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import special

from .analytics import cumulative_index, daily_returns, premium_series, staking_returns
from .chain import RateCurve
from .errors import (
    DataError,
    ExactLeverageError,
    InfiniteVifError,
    InsufficientObservationsError,
    SingularDesignError,
    ValidationError,
)
from .ingest import Panel, PriceSeries, align, standardize

SIGMA_WINDOW = 30
MAX_LAGS = 6
VIF_THRESHOLD = 10.0
# Relative size of an R diagonal entry below which a column is treated as
# linearly dependent on the previous ones.
RANK_TOL = 1e-10

# Regressor names used in panels and results, in table order.
CONST = "const"
DELTA = "delta_daily"
SIGMA_CHANGE = "sigma_daily_change"
MCAP = "mcap"
SIGMA = "sigma_monthly"
VOLUME = "volume"
BASE_REGRESSORS = (DELTA, SIGMA, SIGMA_CHANGE, MCAP, VOLUME)
TABLE_ORDER = (CONST, DELTA, SIGMA_CHANGE, MCAP, SIGMA) + tuple(f"shift{i}" for i in range(1, 7)) + (VOLUME,)
TABLE_LABELS = {
    CONST: "const",
    DELTA: "Δ_daily",
    SIGMA_CHANGE: "σ_daily_change",
    MCAP: "market cap",
    SIGMA: "σ_monthly",
    VOLUME: "volume",
    **{f"shift{i}": f"shift{i}" for i in range(1, 7)},
}


def rolling_sigma(series: Sequence[float], window: int = SIGMA_WINDOW) -> np.ndarray:
    """Sample std (n-1) of each ``window`` consecutive values; ``len - window + 1`` outputs."""
    x = np.asarray(series, dtype=float)
    if window < 2:
        raise ValidationError("window must be at least 2")
    if x.size < window:
        raise InsufficientObservationsError(f"need {window} observations, got {x.size}")
    return np.lib.stride_tricks.sliding_window_view(x, window).std(axis=1, ddof=1)


def pct_change(x: Sequence[float]) -> np.ndarray:
    """``(x[t] - x[t-1]) / x[t-1]``; NaN where the previous value is zero."""
    x = np.asarray(x, dtype=float)
    prev = x[:-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(prev != 0, (x[1:] - prev) / np.where(prev != 0, prev, 1.0), np.nan)


def significance_stars(p: float) -> str:
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"p-value must be in [0, 1], got {p!r}")
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.1:
        return "*"
    return ""


def t_pvalue(t: float | np.ndarray, df: int) -> np.ndarray:
    """Two-sided Student-t p-value, ``I_{df/(df+t^2)}(df/2, 1/2)``."""
    t = np.asarray(t, dtype=float)
    return special.betainc(df / 2.0, 0.5, df / (df + t * t))


@dataclass
class RegressionResult:
    names: tuple[str, ...]
    coef: np.ndarray
    se: np.ndarray
    tstat: np.ndarray
    pvalue: np.ndarray
    r2: float
    adj_r2: float
    nobs: int
    residuals: np.ndarray
    vif: dict[str, float] = field(default_factory=dict)
    metadata: dict[str, object] = field(default_factory=dict)
    cov: np.ndarray | None = None

    @property
    def df_resid(self) -> int:
        return self.nobs - len(self.names)

    @property
    def stars(self) -> tuple[str, ...]:
        return tuple(significance_stars(float(p)) if np.isfinite(p) else "" for p in self.pvalue)

    def __getitem__(self, name: str) -> tuple[float, float]:
        i = self.names.index(name)
        return float(self.coef[i]), float(self.se[i])

    def wald_zero(self, names: Sequence[str] | None = None) -> tuple[float, float]:
        """Joint test that the named coefficients are all zero, HC3 covariance.

        Returns ``(F, p)`` with ``F = W / q`` referred to ``F(q, n - k)``.
        """
        idx = [self.names.index(n) for n in (names or self.names)]
        b = self.coef[idx]
        V = self.cov[np.ix_(idx, idx)]
        w = float(b @ np.linalg.solve(V, b))
        q = len(idx)
        f = w / q
        return f, float(special.fdtrc(q, self.df_resid, f))


def _dependent_columns(X: np.ndarray, names: Sequence[str]) -> tuple[str, ...]:
    """Columns that are linear combinations of earlier columns."""
    scale = np.linalg.norm(X, axis=0)
    scale[scale == 0] = 1.0
    Xs = X / scale
    bad = []
    basis = np.empty((X.shape[0], 0))
    for j in range(X.shape[1]):
        col = Xs[:, j]
        if basis.shape[1]:
            col = col - basis @ (basis.T @ col)
            col = col - basis @ (basis.T @ col)
        nrm = np.linalg.norm(col)
        if nrm < math.sqrt(RANK_TOL):
            bad.append(names[j])
        else:
            basis = np.column_stack([basis, col / nrm])
    return tuple(bad)


def _qr(X: np.ndarray, names: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    n, k = X.shape
    if n <= k:
        raise InsufficientObservationsError(f"{n} observations for {k} parameters")
    Q, R = np.linalg.qr(X)
    d = np.abs(np.diag(R))
    scale = np.linalg.norm(X, axis=0)
    if np.any(d <= RANK_TOL * np.where(scale > 0, scale, 1.0)) or np.any(scale == 0):
        cols = _dependent_columns(X, names)
        raise SingularDesignError(f"design matrix is rank deficient; dependent column(s): {', '.join(cols) or '?'}", cols)
    return Q, R


def ols(X: np.ndarray, y: np.ndarray, names: Sequence[str] | None = None, hc3: bool = True) -> RegressionResult:
    """Least squares fit of ``y`` on the columns of ``X`` (intercept included by caller).

    R-squared uses the mean-centred total sum of squares.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise DataError(f"shape mismatch: X {X.shape}, y {y.shape}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DataError("non-finite values in regression data")
    names = tuple(names) if names is not None else tuple(f"x{i}" for i in range(X.shape[1]))
    Q, R = _qr(X, names)
    beta = np.linalg.solve(R, Q.T @ y)
    resid = y - X @ beta
    # residuals at rounding level are an exact fit
    resid[np.abs(resid) <= 16 * np.finfo(float).eps * max(np.abs(y).max(), 1e-300)] = 0.0
    n, k = X.shape
    sse = float(resid @ resid)
    yc = y - y.mean()
    sst = float(yc @ yc)
    r2 = 1.0 - sse / sst if sst > 0 else (1.0 if sse == 0 else 0.0)
    r2 = min(max(r2, 0.0), 1.0)
    adj = 1.0 - (1.0 - r2) * (n - 1) / (n - k)

    if hc3:
        cov = _hc3_cov(Q, R, resid)
    else:
        Rinv = np.linalg.inv(R)
        cov = Rinv @ Rinv.T * (sse / (n - k))
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, beta / np.where(se > 0, se, 1.0), np.where(beta == 0, 0.0, np.inf * np.sign(beta)))
    p = t_pvalue(t, n - k)
    return RegressionResult(names, beta, se, t, p, r2, adj, n, resid, cov=cov,
                            metadata={"covariance": "HC3" if hc3 else "classical"})


def _hc3_cov(Q: np.ndarray, R: np.ndarray, resid: np.ndarray) -> np.ndarray:
    h = np.einsum("ij,ij->i", Q, Q)
    if np.any(h >= 1.0 - 1e-12):
        rows = np.flatnonzero(h >= 1.0 - 1e-12)
        raise ExactLeverageError(f"observation(s) {rows.tolist()} have leverage 1")
    w = (resid / (1.0 - h)) ** 2
    # (X'X)^-1 X' diag(w) X (X'X)^-1 with X = QR reduces to R^-1 Q' diag(w) Q R^-T
    Rinv = np.linalg.inv(R)
    A = Q.T @ (Q * w[:, None])
    return Rinv @ A @ Rinv.T


def hc3_se(X: np.ndarray, y: np.ndarray, residuals: np.ndarray) -> np.ndarray:
    """HC3 standard errors for an already fitted OLS model."""
    X = np.asarray(X, dtype=float)
    Q, R = _qr(X, tuple(f"x{i}" for i in range(X.shape[1])))
    return np.sqrt(np.clip(np.diag(_hc3_cov(Q, R, np.asarray(residuals, dtype=float))), 0.0, None))


def vif(X: np.ndarray, names: Sequence[str] | None = None) -> dict[str, float]:
    """``1 / (1 - R^2_j)`` of each column regressed on the others plus an intercept.

    ``X`` excludes the intercept column.
    """
    X = np.asarray(X, dtype=float)
    n, k = X.shape
    names = tuple(names) if names is not None else tuple(f"x{i}" for i in range(k))
    if k < 2:
        raise ValidationError("VIF needs at least two regressors")
    full = np.column_stack([np.ones(n), X])
    try:
        _qr(full, (CONST,) + names)
    except SingularDesignError as exc:
        raise InfiniteVifError(f"perfect collinearity (infinite VIF): {', '.join(exc.columns)}", exc.columns) from None
    out = {}
    for j, name in enumerate(names):
        others = np.column_stack([np.ones(n), np.delete(X, j, axis=1)])
        fit = ols(others, X[:, j], hc3=False)
        out[name] = math.inf if fit.r2 >= 1.0 else 1.0 / (1.0 - fit.r2)
    return out


def collinear(vifs: Mapping[str, float], threshold: float = VIF_THRESHOLD) -> list[str]:
    return [k for k, v in vifs.items() if v > threshold]


@dataclass(frozen=True)
class PacfResult:
    values: np.ndarray  # lag 1..max_lag
    band: float
    nobs: int

    @property
    def significant(self) -> np.ndarray:
        return np.abs(self.values) > self.band


def lag_matrix(y: np.ndarray, lags: int) -> np.ndarray:
    """Columns ``y[t-1] .. y[t-lags]`` for ``t = lags .. n-1``."""
    n = len(y)
    return np.column_stack([y[lags - j:n - j] for j in range(1, lags + 1)])


def pacf(series: Sequence[float], max_lag: int = MAX_LAGS) -> PacfResult:
    """Partial autocorrelation by the regression method.

    ``PACF(k)`` is the last coefficient of the OLS regression of ``y[t]`` on
    ``y[t-1..t-k]`` with intercept. The band is ``1.96 / sqrt(n)``.
    """
    y = np.asarray(series, dtype=float)
    n = y.size
    if max_lag < 1:
        raise ValidationError("max_lag must be >= 1")
    if n <= max_lag + 1:
        raise InsufficientObservationsError(f"PACF to lag {max_lag} needs more than {max_lag + 1} observations")
    vals = np.empty(max_lag)
    for k in range(1, max_lag + 1):
        X = np.column_stack([np.ones(n - k), lag_matrix(y, k)])
        Q, R = _qr(X, (CONST,) + tuple(f"lag{i}" for i in range(1, k + 1)))
        vals[k - 1] = np.linalg.solve(R, Q.T @ y[k:])[-1]
    return PacfResult(vals, 1.96 / math.sqrt(n), n)


def select_lags(pacf_values: Sequence[float], band: float, max_lag: int = MAX_LAGS) -> int:
    """Largest lag ``<= max_lag`` whose PACF lies outside the band, else 0."""
    v = np.asarray(pacf_values, dtype=float)[:max_lag]
    if v.size < max_lag:
        raise ValidationError(f"need PACF values for {max_lag} lags")
    outside = np.flatnonzero(np.abs(v) > band)
    return int(outside[-1] + 1) if outside.size else 0


# --------------------------------------------------------------------------
# Models on per-token panels


def _token_columns(panel: Panel, token: str, names: Sequence[str]) -> dict[str, np.ndarray]:
    out = {}
    for n in names:
        key = f"{token}:{n}"
        if key not in panel:
            raise DataError(f"panel is missing column {key!r}")
        out[n] = panel[key]
    return out


def _fit(y: np.ndarray, regressors: dict[str, np.ndarray], names: Sequence[str]) -> RegressionResult:
    n = y.size
    X = np.column_stack([np.ones(n)] + [regressors[k] for k in names])
    res = ols(X, y, (CONST,) + tuple(names))
    res.vif = vif(X[:, 1:], names)
    res.metadata["collinear"] = collinear(res.vif)
    return res


def excess_regression(panel: Panel, token: str) -> RegressionResult:
    """``Xs = a + b1*Δ_daily + b2*σ_monthly + b3*σ_daily_change + b4*MCap + b5*V``."""
    cols = _token_columns(panel, token, ("xs",) + BASE_REGRESSORS)
    res = _fit(cols["xs"], cols, BASE_REGRESSORS)
    res.metadata.update(panel.metadata.get(token, {}))
    res.metadata["model"] = "excess"
    return res


def premium_regression(panel: Panel, token: str, lags: int = MAX_LAGS, dependent: str = "premium") -> RegressionResult:
    """Excess-return regressors plus ``lags`` lagged copies of the premium.

    The first ``lags`` rows are consumed by the lags. The PACF-selected order
    is reported in ``metadata["selected_lag"]`` but does not change ``lags``.
    """
    if not 0 <= lags <= MAX_LAGS:
        raise ValidationError(f"lags must be in [0, {MAX_LAGS}]")
    cols = _token_columns(panel, token, (dependent,) + BASE_REGRESSORS)
    y_full = cols[dependent]
    k = len(BASE_REGRESSORS) + lags + 1
    if y_full.size < lags + k + 2:
        raise InsufficientObservationsError(f"{token}: {y_full.size} rows too few for {lags} lags")
    regs = {name: cols[name][lags:] for name in BASE_REGRESSORS}
    names = list(BASE_REGRESSORS)
    if lags:
        L = lag_matrix(y_full, lags)
        for i in range(lags):
            regs[f"shift{i + 1}"] = L[:, i]
            names.append(f"shift{i + 1}")
    res = _fit(y_full[lags:], regs, names)
    res.metadata.update(panel.metadata.get(token, {}))
    res.metadata["model"] = "premium"
    if y_full.size > MAX_LAGS + 1:
        pc = pacf(y_full, MAX_LAGS)
        res.metadata["pacf"] = pc
        res.metadata["selected_lag"] = select_lags(pc.values, pc.band)
    return res


def build_regression_panel(
    lsts: Sequence[PriceSeries],
    base: PriceSeries,
    curve: RateCurve,
    standardize_usd: bool = True,
    delta_source: str = "base",
    size_source: str = "base",
) -> tuple[dict[str, Panel], dict[str, dict[str, int]]]:
    """Derive one regression panel per LST against its base currency.

    Per token, after aligning the LST with the base series:

    * ``xs``: LST daily return in native units minus the staking return.
    * ``premium``: ``100 * (LST index - staking index)`` in percentage points.
    * ``delta_daily``: daily USD return of the base (or LST) price.
    * ``sigma_monthly``: 30-observation rolling std of ``delta_daily``.
    * ``sigma_daily_change``: relative daily change of ``sigma_monthly``.
    * ``mcap`` / ``volume``: market cap and volume of the base (or LST),
      z-scored unless ``standardize_usd`` is false.

    Rows with gaps, missing values or zero sigma are dropped per token and
    counted in the returned report.
    """
    columns: dict[str, np.ndarray] = {}
    meta: dict[str, dict[str, str]] = {}
    reports: dict[str, dict[str, int]] = {}
    all_dates: dict[str, tuple] = {}
    for lst in lsts:
        tok = lst.token
        usd_src = base if delta_source == "base" else lst
        size_src = base if size_source == "base" else lst
        req = {lst.token: ("price_native",)}
        if base.token == lst.token:
            raise DataError("LST and base series share a token name")
        req[base.token] = ("price_usd",) + (("market_cap_usd", "volume_usd") if size_src is base else ())
        if size_src is lst:
            req[lst.token] = ("price_native", "market_cap_usd", "volume_usd")
        if usd_src is lst:
            req[lst.token] = tuple(dict.fromkeys(req[lst.token] + ("price_usd",)))
        for s, fields_ in req.items():
            src = lst if s == lst.token else base
            for f in fields_:
                if np.all(np.isnan(src.column(f))):
                    raise DataError(f"{src.token}: column {f!r} is empty")
        panel, report = align([lst, base], required=req)
        dates = panel.dates
        if len(dates) < SIGMA_WINDOW + 2:
            raise InsufficientObservationsError(f"{tok}: only {len(dates)} aligned rows")
        p = panel[f"{tok}:price_native"]
        r_lst = daily_returns(p, dates, tok, exclude_gaps=False)
        stake = staking_returns(curve, dates)
        gap = r_lst.gap
        xs = r_lst.values - stake.values
        lst_idx = p / p[0]
        base_idx = cumulative_index(stake.values)
        prem = premium_series(lst_idx, base_idx)[1:]
        delta = daily_returns(panel[f"{usd_src.token}:price_usd"], dates, exclude_gaps=False).values
        sigma = np.full(delta.size, np.nan)
        sigma[SIGMA_WINDOW - 1:] = rolling_sigma(delta, SIGMA_WINDOW)
        change = np.concatenate(([np.nan], pct_change(sigma)))
        mcap = panel[f"{size_src.token}:market_cap_usd"][1:]
        vol = panel[f"{size_src.token}:volume_usd"][1:]

        keep = ~gap & np.isfinite(sigma) & np.isfinite(change)
        report = dict(report)
        report["gap"] = int(gap.sum())
        report["sigma_warmup"] = SIGMA_WINDOW
        report["sigma_zero"] = int(np.sum(np.isinf(change) | (np.isnan(change) & np.isfinite(sigma))))
        if keep.sum() < 2:
            raise InsufficientObservationsError(f"{tok}: no usable rows after deletion")
        if standardize_usd:
            mcap_k, vol_k = standardize(mcap[keep]), standardize(vol[keep])
        else:
            mcap_k, vol_k = mcap[keep], vol[keep]
        kept_dates = tuple(d for d, k in zip(dates[1:], keep) if k)
        all_dates[tok] = kept_dates
        for name, col in (("xs", xs[keep]), ("premium", prem[keep]), (DELTA, delta[keep]), (SIGMA, sigma[keep]),
                          (SIGMA_CHANGE, change[keep]), (MCAP, mcap_k), (VOLUME, vol_k)):
            columns[f"{tok}:{name}"] = col
        meta[tok] = {"standardized": "mcap,volume" if standardize_usd else "none",
                     "delta_source": usd_src.token, "size_source": size_src.token}
        reports[tok] = report

    panels = {
        tok: Panel(dts, {k: v for k, v in columns.items() if k.startswith(tok + ":")}, {tok: meta[tok]})
        for tok, dts in all_dates.items()
    }
    return panels, reports


def format_regression_table(results: Mapping[str, RegressionResult | Exception]) -> str:
    """Regression TSV: coef+stars rows with (se) rows beneath."""
    toks = list(results)
    lines = ["\t".join([""] + toks)]
    for name in TABLE_ORDER:
        coef_cells, se_cells = [], []
        for tok in toks:
            res = results[tok]
            if isinstance(res, RegressionResult) and name in res.names:
                i = res.names.index(name)
                coef_cells.append(f"{res.coef[i]:.3f}{res.stars[i]}")
                se_cells.append(f"({res.se[i]:.3f})")
            else:
                coef_cells.append("")
                se_cells.append("")
        lines.append("\t".join([TABLE_LABELS[name]] + coef_cells))
        lines.append("\t".join([""] + se_cells))

    def footer(label, fn):
        cells = []
        for tok in toks:
            res = results[tok]
            cells.append(fn(res) if isinstance(res, RegressionResult) else "error")
        lines.append("\t".join([label] + cells))

    footer("Observations", lambda r: str(r.nobs))
    footer("R²", lambda r: f"{r.r2:.3f}")
    footer("Adjusted R²", lambda r: f"{r.adj_r2:.3f}")
    lines.append("Note:\t*p<0.1; **p<0.05; ***p<0.01")
    return "\n".join(lines) + "\n"
