"""Proof-of-stake staking economics at daily resolution.

Rewards are claimed and re-staked once per day using the geometric daily
rate ``(1 + A) ** (1/365) - 1`` so that a full year of accrual reproduces the
quoted annual rate ``A`` exactly.
"""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass, field, replace
from datetime import date, timedelta
from pathlib import Path
from typing import Sequence

from . import config as _cfg
from .errors import (
    ConfigError,
    CoverageError,
    DataError,
    InsufficientStakeError,
    UnstakingUnsupportedError,
    ValidationError,
)

DAYS_PER_YEAR = 365


def _check_rate(rate: float) -> float:
    if not (0.0 <= rate < 1.0) or math.isnan(rate):
        raise ValidationError(f"annual rate must be in [0, 1), got {rate!r}")
    return float(rate)


def daily_rate(annual_rate: float) -> float:
    """Geometric daily rate equivalent to ``annual_rate`` over 365 days."""
    _check_rate(annual_rate)
    return math.expm1(math.log1p(annual_rate) / DAYS_PER_YEAR)


@dataclass(frozen=True)
class RateCurve:
    """Annual staking rates held constant from each date until the next one.

    ``end`` (inclusive) bounds coverage; ``None`` extends the last rate
    indefinitely. A flat curve covers every date.
    """

    dates: tuple[date, ...]
    rates: tuple[float, ...]
    end: date | None = None

    def __post_init__(self):
        if len(self.dates) != len(self.rates) or not self.rates:
            raise ValidationError("rate curve needs matching, non-empty dates and rates")
        for a, b in zip(self.dates, self.dates[1:]):
            if not a < b:
                raise ValidationError(f"rate curve dates must be strictly increasing ({a} >= {b})")
        for r in self.rates:
            _check_rate(r)
        if self.end is not None and self.end < self.dates[0]:
            raise ValidationError("rate curve ends before it starts")

    @classmethod
    def flat(cls, rate: float) -> RateCurve:
        return cls((date.min,), (float(rate),))

    @classmethod
    def from_csv(cls, path: str | Path) -> RateCurve:
        """Read a two-column ``date,annual_rate`` file."""
        path = Path(path)
        dates, rates = [], []
        try:
            fh = path.open(newline="", encoding="utf-8")
        except FileNotFoundError as exc:
            raise DataError(f"rate curve file not found: {path}") from exc
        with fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise DataError(f"{path}: empty rate curve file")
            if [h.strip() for h in header] != ["date", "annual_rate"]:
                raise DataError(f"{path}:1: expected header 'date,annual_rate', got {','.join(header)!r}")
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != 2:
                    raise DataError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
                try:
                    d = date.fromisoformat(row[0].strip())
                    r = float(row[1])
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: {exc}") from None
                dates.append(d)
                rates.append(r)
        if not dates:
            raise DataError(f"{path}: rate curve has no rows")
        try:
            return cls(tuple(dates), tuple(rates))
        except ValidationError as exc:
            raise DataError(f"{path}: {exc}") from None

    @property
    def is_flat(self) -> bool:
        return self.dates == (date.min,)

    @property
    def start(self) -> date:
        return self.dates[0]

    def covers(self, when: date) -> bool:
        return self.dates[0] <= when and (self.end is None or when <= self.end)

    def rate_at(self, when: date) -> float:
        if not self.covers(when):
            raise CoverageError(f"rate curve does not cover {when}")
        return self.rates[bisect.bisect_right(self.dates, when) - 1]


@dataclass(frozen=True)
class Slashing:
    probability: float = 0.0
    penalty: float = 0.0

    def __post_init__(self):
        for name in ("probability", "penalty"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"slashing {name} must be in [0, 1], got {v!r}")


@dataclass(frozen=True)
class ChainProfile:
    """Staking parameters of one chain.

    ``reward_rate`` is either a flat annual rate or a :class:`RateCurve`.
    ``lockup_days=None`` means unstaking is impossible (ETH before Shanghai).
    """

    name: str
    reward_rate: float | RateCurve
    lockup_days: int | None = 0
    slashing: Slashing = field(default_factory=Slashing)
    adj_reward: float | None = None  # informational only

    def __post_init__(self):
        if not isinstance(self.reward_rate, RateCurve):
            object.__setattr__(self, "reward_rate", _check_rate(float(self.reward_rate)))
        if self.lockup_days is not None and self.lockup_days < 0:
            raise ValidationError("lockup_days must be >= 0")

    @property
    def curve(self) -> RateCurve:
        if isinstance(self.reward_rate, RateCurve):
            return self.reward_rate
        return RateCurve.flat(self.reward_rate)

    def annual_rate(self, day: int, start: date | None = None) -> float:
        """Annual rate in force on simulation ``day``.

        Day indices map to calendar dates as ``start + day``; ``start``
        defaults to the first date of the curve.
        """
        if not isinstance(self.reward_rate, RateCurve):
            return self.reward_rate
        curve = self.reward_rate
        if curve.is_flat:
            return curve.rates[0]
        origin = start if start is not None else curve.start
        return curve.rate_at(origin + timedelta(days=day))


@dataclass(frozen=True)
class StakingPosition:
    staked: float = 0.0
    pending_unstakes: tuple[tuple[float, int], ...] = ()
    day: int = 0

    def __post_init__(self):
        if self.staked < 0:
            raise ValidationError(f"staked must be >= 0, got {self.staked!r}")
        if any(a <= 0 for a, _ in self.pending_unstakes):
            raise ValidationError("pending unstake amounts must be positive")

    @property
    def pending(self) -> float:
        return math.fsum(a for a, _ in self.pending_unstakes)


def accrue(position: StakingPosition, profile: ChainProfile, start: date | None = None) -> StakingPosition:
    """One day of reward accrual with immediate re-staking."""
    r = daily_rate(profile.annual_rate(position.day, start))
    return replace(position, staked=position.staked * (1.0 + r), day=position.day + 1)


def request_unstake(position: StakingPosition, amount: float, profile: ChainProfile) -> StakingPosition:
    if profile.lockup_days is None:
        raise UnstakingUnsupportedError(f"{profile.name}: stake cannot be withdrawn (infinite lockup)")
    if not amount > 0:
        raise ValidationError(f"unstake amount must be positive, got {amount!r}")
    if amount > position.staked:
        raise InsufficientStakeError(f"cannot unstake {amount} from {position.staked}")
    release = position.day + profile.lockup_days
    return replace(
        position,
        staked=max(position.staked - amount, 0.0),
        pending_unstakes=position.pending_unstakes + ((float(amount), release),),
    )


def process_releases(position: StakingPosition) -> tuple[StakingPosition, float]:
    due = [a for a, d in position.pending_unstakes if d <= position.day]
    if not due:
        return position, 0.0
    keep = tuple((a, d) for a, d in position.pending_unstakes if d > position.day)
    return replace(position, pending_unstakes=keep), math.fsum(due)


def slash(position: StakingPosition, penalty: float) -> tuple[StakingPosition, float]:
    if not 0.0 <= penalty <= 1.0:
        raise ValidationError(f"penalty must be in [0, 1], got {penalty!r}")
    loss = position.staked * penalty
    return replace(position, staked=position.staked * (1.0 - penalty)), loss


def compound(staked: float, annual_rate: float, days: int) -> float:
    """Closed form of ``days`` flat-rate accruals."""
    return staked * (1.0 + daily_rate(annual_rate)) ** days


# Reward and lockup columns of the top-10 staking chains. Ranges in the
# source ("1-3 days") are stored as their upper bound.
CHAIN_PRESETS: dict[str, ChainProfile] = {
    p.name: p
    for p in (
        ChainProfile("ETH", 0.0482, None, adj_reward=0.0504),
        ChainProfile("ADA", 0.0325, 0, adj_reward=0.0014),
        ChainProfile("SOL", 0.0651, 3, adj_reward=-0.0103),
        ChainProfile("BNB", 0.0269, 90, adj_reward=0.0827),
        ChainProfile("AVAX", 0.0794, 14, adj_reward=0.0223),
        ChainProfile("MATIC", 0.0624, 4, adj_reward=0.0337),
        ChainProfile("DOT", 0.1435, 28, adj_reward=0.0667),
        ChainProfile("TRX", 0.0378, 3, adj_reward=0.017),
        ChainProfile("ATOM", 0.2278, 21, adj_reward=0.042),
        ChainProfile("ICP", 0.074, 180, adj_reward=-0.0239),
    )
}


def profile_from_mapping(cfg: dict, base: Path = Path(".")) -> ChainProfile:
    """Build a profile from parsed config keys.

    Recognised keys: ``name``, ``reward_rate`` or ``rate_curve`` (CSV path),
    ``lockup_days`` (integer or ``"infinite"``), ``slashing.probability``,
    ``slashing.penalty``, ``adj_reward``. ``preset`` starts from a built-in
    profile which the other keys override.
    """
    preset = cfg.get("preset")
    if preset is not None:
        if preset not in CHAIN_PRESETS:
            raise ConfigError(f"unknown chain preset {preset!r}; choose from {sorted(CHAIN_PRESETS)}")
        defaults = CHAIN_PRESETS[preset]
    else:
        defaults = None

    name = cfg.get("name", defaults.name if defaults else None)
    if not name:
        raise ConfigError("chain profile needs a 'name'")

    if "rate_curve" in cfg and "reward_rate" in cfg:
        raise ConfigError("give either reward_rate or rate_curve, not both")
    if "rate_curve" in cfg:
        rate: float | RateCurve = RateCurve.from_csv(_cfg.resolve(base, cfg["rate_curve"]))
    elif "reward_rate" in cfg:
        rate = _cfg.get_float(cfg, "reward_rate")
    elif defaults is not None:
        rate = defaults.reward_rate
    else:
        raise ConfigError("chain profile needs reward_rate or rate_curve")

    if "lockup_days" in cfg:
        lockup = _cfg.parse_lockup(cfg["lockup_days"])
    elif defaults is not None:
        lockup = defaults.lockup_days
    else:
        raise ConfigError("chain profile needs lockup_days")

    sl = cfg.get("slashing", {})
    if not isinstance(sl, dict):
        raise ConfigError("'slashing' must be a table with probability/penalty")
    adj = cfg.get("adj_reward", defaults.adj_reward if defaults else None)
    try:
        return ChainProfile(
            name=str(name),
            reward_rate=rate,
            lockup_days=lockup,
            slashing=Slashing(_cfg.get_float(sl, "probability", 0.0), _cfg.get_float(sl, "penalty", 0.0)),
            adj_reward=None if adj is None else float(adj),
        )
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


def load_chain_profile(path: str | Path) -> ChainProfile:
    path = Path(path)
    return profile_from_mapping(_cfg.load_config(path), path.parent)


def conserved_total(position: StakingPosition, released: Sequence[float] = ()) -> float:
    return position.staked + position.pending + math.fsum(released)
