"""Loading and aligning historical price files.

Price files use the header ``date,price_native,price_usd,market_cap_usd,volume_usd``.
Only ``date`` is mandatory per row; empty cells are missing values (NaN).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .chain import RateCurve
from .errors import ConfigError, DataError

PRICE_COLUMNS = ("date", "price_native", "price_usd", "market_cap_usd", "volume_usd")
FIELDS = PRICE_COLUMNS[1:]


@dataclass(frozen=True, eq=False)
class PriceSeries:
    token: str
    dates: tuple[date, ...]
    price_native: np.ndarray
    price_usd: np.ndarray
    market_cap_usd: np.ndarray
    volume_usd: np.ndarray
    units: dict[str, str] = field(default_factory=lambda: {"volume_usd": "USD"})

    def __post_init__(self):
        n = len(self.dates)
        for name in FIELDS:
            if len(getattr(self, name)) != n:
                raise DataError(f"{self.token}: column {name} has wrong length")
        for a, b in zip(self.dates, self.dates[1:]):
            if not a < b:
                raise DataError(f"{self.token}: dates not strictly increasing at {b}")
        p = self.price_native
        if np.any(p[~np.isnan(p)] <= 0):
            raise DataError(f"{self.token}: non-positive price_native")

    def __len__(self) -> int:
        return len(self.dates)

    def column(self, name: str) -> np.ndarray:
        if name not in FIELDS:
            raise KeyError(name)
        return getattr(self, name)

    def present_fields(self) -> tuple[str, ...]:
        return tuple(f for f in FIELDS if not np.all(np.isnan(getattr(self, f))))


def _cell(value: str, path: Path, lineno: int, name: str) -> float:
    value = value.strip()
    if not value:
        return math.nan
    try:
        x = float(value)
    except ValueError:
        raise DataError(f"{path}:{lineno}: {name} is not a number: {value!r}") from None
    if not math.isfinite(x):
        raise DataError(f"{path}:{lineno}: {name} is not finite: {value!r}")
    return x


def load_price_series(path: str | Path, token: str | None = None) -> PriceSeries:
    """Parse, validate and sort a price file; the token defaults to the file stem."""
    path = Path(path)
    token = token or path.stem
    try:
        fh = path.open(newline="", encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"price file not found: {path}") from None
    rows: list[tuple[date, list[float], int]] = []
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != PRICE_COLUMNS:
            missing = [c for c in PRICE_COLUMNS if header is None or c not in [h.strip() for h in header]]
            detail = f"missing column(s) {', '.join(missing)}" if missing else "columns out of order"
            raise DataError(f"{path}:1: bad header ({detail}); expected {','.join(PRICE_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(PRICE_COLUMNS):
                raise DataError(f"{path}:{lineno}: expected {len(PRICE_COLUMNS)} fields, got {len(row)}")
            try:
                d = date.fromisoformat(row[0].strip())
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad ISO-8601 date {row[0]!r}") from None
            values = [_cell(v, path, lineno, name) for v, name in zip(row[1:], FIELDS)]
            if not math.isnan(values[0]) and values[0] <= 0:
                raise DataError(f"{path}:{lineno}: non-positive price_native {row[1].strip()}")
            rows.append((d, values, lineno))
    rows.sort(key=lambda r: r[0])
    for (d1, _, _), (d2, _, line) in zip(rows, rows[1:]):
        if d1 == d2:
            raise DataError(f"{path}:{line}: duplicate date {d2.isoformat()}")
    cols = np.array([r[1] for r in rows], dtype=float).reshape(len(rows), len(FIELDS))
    return PriceSeries(token, tuple(r[0] for r in rows), *(cols[:, i].copy() for i in range(len(FIELDS))))


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def write_price_series(series: PriceSeries, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PRICE_COLUMNS)
        for i, d in enumerate(series.dates):
            w.writerow([d.isoformat()] + [_fmt(series.column(f)[i]) for f in FIELDS])


def load_staking_curve(path: str | Path | None = None, flat_fallback: float | None = None) -> RateCurve:
    """Dated step curve from ``path``, else a flat curve at ``flat_fallback``."""
    if path is not None:
        p = Path(path)
        if p.exists() and p.stat().st_size == 0 and flat_fallback is not None:
            return RateCurve.flat(flat_fallback)
        return RateCurve.from_csv(p)
    if flat_fallback is not None:
        return RateCurve.flat(flat_fallback)
    raise ConfigError("a staking curve file or a flat rate is required")


@dataclass(frozen=True, eq=False)
class Panel:
    """Columns aligned on a common date vector, keyed ``token:field``."""

    dates: tuple[date, ...]
    columns: dict[str, np.ndarray]
    metadata: dict[str, dict[str, str]] = field(default_factory=dict)

    def __post_init__(self):
        for name, col in self.columns.items():
            if len(col) != len(self.dates):
                raise DataError(f"panel column {name} has {len(col)} rows, expected {len(self.dates)}")

    def __len__(self) -> int:
        return len(self.dates)

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise DataError(f"panel has no column {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.columns

    def tokens(self) -> list[str]:
        return list(dict.fromkeys(k.split(":", 1)[0] for k in self.columns))

    def series(self, token: str) -> PriceSeries:
        n = len(self.dates)
        cols = {f: self.columns.get(f"{token}:{f}", np.full(n, np.nan)) for f in FIELDS}
        return PriceSeries(token, self.dates, **cols)

    def equals(self, other: Panel) -> bool:
        return (
            self.dates == other.dates
            and self.columns.keys() == other.columns.keys()
            and all(np.array_equal(self.columns[k], other.columns[k]) for k in self.columns)
        )


def align(
    series: Sequence[PriceSeries],
    required: dict[str, Iterable[str]] | None = None,
    policy: str = "intersect",
) -> tuple[Panel, dict[str, int]]:
    """Intersect dates and drop rows missing any required field.

    ``required`` maps token to fields; by default every field the series
    populates anywhere is required. Returns the panel and a per-column count
    of dates dropped because that column was missing.
    """
    if policy != "intersect":
        raise ConfigError(f"unsupported alignment policy {policy!r}")
    if not series:
        raise DataError("nothing to align")
    common = set(series[0].dates)
    for s in series[1:]:
        common &= set(s.dates)
    if not common:
        raise DataError("series share no dates")
    dates = sorted(common)

    picked: dict[str, np.ndarray] = {}
    needed: list[str] = []
    metadata: dict[str, dict[str, str]] = {}
    for s in series:
        index = {d: i for i, d in enumerate(s.dates)}
        rows = np.fromiter((index[d] for d in dates), dtype=int, count=len(dates))
        fields = tuple(required[s.token]) if required and s.token in required else s.present_fields()
        for f in fields:
            name = f"{s.token}:{f}"
            picked[name] = s.column(f)[rows]
            needed.append(name)
            metadata[name] = {"source": s.token, "unit": s.units.get(f, "native" if f == "price_native" else "USD")}

    missing = {name: np.isnan(picked[name]) for name in needed}
    keep = np.ones(len(dates), dtype=bool)
    for m in missing.values():
        keep &= ~m
    report = {name: int(m.sum()) for name, m in missing.items() if m.any()}
    if not keep.any():
        raise DataError("no complete rows after listwise deletion")
    panel = Panel(
        tuple(d for d, k in zip(dates, keep) if k),
        {name: col[keep] for name, col in picked.items()},
        metadata,
    )
    return panel, report


def standardize(x: np.ndarray) -> np.ndarray:
    """Z-score with the sample (n-1) standard deviation."""
    x = np.asarray(x, dtype=float)
    sd = x.std(ddof=1)
    if not sd > 0:
        raise DataError("cannot standardize a constant column")
    return (x - x.mean()) / sd
