"""Returns, staking baseline, excess returns, premium and peg deviation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from datetime import date, timedelta
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .chain import RateCurve, daily_rate
from .errors import DataError, ValidationError


@dataclass(frozen=True, eq=False)
class ReturnSeries:
    """Daily simple returns; ``dates[i]`` is the end date of return ``i``.

    ``gap`` marks returns spanning more than one calendar day.
    """

    dates: tuple
    values: np.ndarray
    source: str = ""
    gap: np.ndarray | None = None

    def __post_init__(self):
        if len(self.dates) != len(self.values):
            raise DataError("dates and values differ in length")
        if np.any(self.values <= -1):
            raise DataError("returns must be > -1")

    def __len__(self) -> int:
        return len(self.values)

    def without_gaps(self) -> ReturnSeries:
        if self.gap is None or not self.gap.any():
            return self
        keep = ~self.gap
        return ReturnSeries(tuple(d for d, k in zip(self.dates, keep) if k), self.values[keep], self.source, self.gap[keep])


def daily_returns(prices: Sequence[float], dates: Sequence | None = None, source: str = "",
                  exclude_gaps: bool = True) -> ReturnSeries:
    """``p[t] / p[t-1] - 1``.

    With calendar ``dates``, returns spanning a gap of more than one day are
    flagged and, unless ``exclude_gaps`` is false, dropped.
    """
    p = np.asarray(prices, dtype=float)
    if p.size < 2:
        raise DataError("need at least two prices")
    if np.any(~(p > 0)):
        raise DataError("prices must be positive")
    r = p[1:] / p[:-1] - 1.0
    if dates is None:
        return ReturnSeries(tuple(range(1, p.size)), r, source)
    if len(dates) != p.size:
        raise DataError("dates and prices differ in length")
    gap = np.array([(b - a).days > 1 for a, b in zip(dates, dates[1:])], dtype=bool)
    out = ReturnSeries(tuple(dates[1:]), r, source, gap)
    return out.without_gaps() if exclude_gaps else out


def staking_returns(curve: RateCurve, dates: Sequence[date]) -> ReturnSeries:
    """Daily staking return earned over each step ``dates[i-1] -> dates[i]``.

    Multi-day steps compound each day's rate.
    """
    vals = []
    for a, b in zip(dates, dates[1:]):
        g = 1.0
        d = a
        while d < b:
            g *= 1.0 + daily_rate(curve.rate_at(d))
            d += timedelta(days=1)
        vals.append(g - 1.0)
    return ReturnSeries(tuple(dates[1:]), np.array(vals), "staking")


def staking_baseline(curve: RateCurve, horizon: int, start: date | None = None) -> np.ndarray:
    """Value of one staked native token re-staked daily, days ``0..horizon``."""
    origin = start if start is not None else (curve.start if not curve.is_flat else date(2000, 1, 1))
    index = np.empty(horizon + 1)
    index[0] = 1.0
    for t in range(1, horizon + 1):
        index[t] = index[t - 1] * (1.0 + daily_rate(curve.rate_at(origin + timedelta(days=t - 1))))
    return index


def cumulative_index(returns: np.ndarray) -> np.ndarray:
    """Index starting at 1 built by compounding ``returns``."""
    return np.concatenate(([1.0], np.cumprod(1.0 + np.asarray(returns, dtype=float))))


def _check_aligned(a: ReturnSeries, b: ReturnSeries) -> None:
    if tuple(a.dates) != tuple(b.dates):
        raise DataError(f"series {a.source or '?'} and {b.source or '?'} are not aligned")


@dataclass(frozen=True, eq=False)
class ExcessSeries:
    dates: tuple
    values: np.ndarray
    source: str = ""

    def __len__(self) -> int:
        return len(self.values)


def excess_returns(lst: ReturnSeries, baseline: ReturnSeries) -> ExcessSeries:
    """Signed difference ``r_lst - r_stake`` per date."""
    _check_aligned(lst, baseline)
    return ExcessSeries(tuple(lst.dates), lst.values - baseline.values, f"{lst.source}-{baseline.source}")


def premium_series(lst_index: Sequence[float], baseline_index: Sequence[float], mode: str = "index",
                   fair_value: Sequence[float] | None = None) -> np.ndarray:
    """Premium in percentage points.

    ``mode="index"``: ``100 * (lst_index - baseline_index)`` on indices that
    both start at 1. ``mode="price"``: ``100 * (market - fair)`` with
    ``lst_index`` read as the market price and ``fair_value`` given.
    """
    a = np.asarray(lst_index, dtype=float)
    if mode == "price":
        if fair_value is None:
            raise ValidationError("price mode needs fair_value")
        f = np.asarray(fair_value, dtype=float)
        if a.shape != f.shape:
            raise DataError("market and fair series are not aligned")
        return 100.0 * (a - f)
    if mode != "index":
        raise ValidationError(f"unknown premium mode {mode!r}")
    b = np.asarray(baseline_index, dtype=float)
    if a.shape != b.shape:
        raise DataError("indices are not aligned")
    if a.size and not (math.isclose(a[0], 1.0, rel_tol=1e-12) and math.isclose(b[0], 1.0, rel_tol=1e-12)):
        raise DataError("indices must both start at 1")
    return 100.0 * (a - b)


@dataclass(frozen=True)
class DescriptiveStats:
    count: int
    mean: float
    std: float
    min: float
    q25: float
    median: float
    q75: float
    max: float


DESCRIPTIVE_ROWS = ("Count", "Mean", "Std.", "Min.", "25%", "50%", "75%", "Max.")


def descriptive_stats(values: Sequence[float]) -> DescriptiveStats:
    """Sample statistics; std uses n-1, quantiles are linear (type 7)."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise DataError("no observations")
    q25, q50, q75 = np.quantile(x, [0.25, 0.5, 0.75], method="linear")
    std = float(x.std(ddof=1)) if x.size > 1 else 0.0
    return DescriptiveStats(int(x.size), float(x.mean()), std, float(x.min()), float(q25), float(q50), float(q75), float(x.max()))


def ecdf(values: Sequence[float]) -> list[tuple[float, float]]:
    """Right-continuous empirical CDF at each distinct value."""
    x = np.sort(np.asarray(values, dtype=float))
    n = x.size
    if n == 0:
        raise DataError("no observations")
    uniq, idx = np.unique(x, return_index=True)
    last = np.append(idx[1:], n)  # one past the final occurrence
    return [(float(v), float(k) / n) for v, k in zip(uniq, last)]


def ecdf_median(points: list[tuple[float, float]]) -> float:
    """Median read off ECDF points, averaging at an exact 0.5 step like type-7."""
    for i, (v, f) in enumerate(points):
        if f > 0.5:
            return v
        if f == 0.5:
            return 0.5 * (v + points[i + 1][0])
    return points[-1][0]


PEG_CLASSES = ("underpriced", "at peg", "overpriced")


def peg_deviation(market: Sequence[float], fair: Sequence[float], band: float = 0.005) -> tuple[np.ndarray, list[str]]:
    """``market / fair - 1`` with a three-way label at +/- ``band``."""
    m = np.asarray(market, dtype=float)
    f = np.asarray(fair, dtype=float)
    if m.shape != f.shape:
        raise DataError("market and fair series are not aligned")
    if np.any(f <= 0):
        raise ValidationError("fair value must be positive")
    dev = m / f - 1.0
    labels = ["underpriced" if d < -band else "overpriced" if d > band else "at peg" for d in dev]
    return dev, labels


def format_descriptive_table(stats: Mapping[str, DescriptiveStats]) -> str:
    """TSV with one column per token and the eight descriptive rows."""
    attrs = [f.name for f in fields(DescriptiveStats)]
    lines = ["\t".join([""] + list(stats))]
    for label, attr in zip(DESCRIPTIVE_ROWS, attrs):
        cells = []
        for s in stats.values():
            v = getattr(s, attr)
            cells.append(str(v) if attr == "count" else f"{v:.5f}")
        lines.append("\t".join([label] + cells))
    return "\n".join(lines) + "\n"


def write_rows(path: str | Path, header: Sequence[str], rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
