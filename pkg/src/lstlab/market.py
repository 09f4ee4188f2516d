"""Market side: a constant-product pool, arbitrage against fair value, the
LP compounding strategy, and the daily scenario runner."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace
from datetime import date
from pathlib import Path

import numpy as np

from . import config as _cfg
from . import lsp as _lsp
from .chain import (
    CHAIN_PRESETS,
    ChainProfile,
    StakingPosition,
    accrue,
    daily_rate,
    process_releases,
    profile_from_mapping,
    request_unstake,
    slash,
)
from .errors import AccountingError, ConfigError, PoolDrainError, ValidationError
from .lsp import LspConfig, LspState, Model

MAX_SWAP_FEE = 0.1


class Side(enum.Enum):
    BUY_LST = "buy_lst"
    SELL_LST = "sell_lst"


@dataclass(frozen=True)
class Pool:
    reserve_native: float
    reserve_lst: float
    swap_fee: float = 0.0

    def __post_init__(self):
        if not (self.reserve_native > 0 and self.reserve_lst > 0):
            raise ValidationError("pool reserves must be positive")
        if not 0.0 <= self.swap_fee <= MAX_SWAP_FEE:
            raise ValidationError(f"swap_fee must be in [0, {MAX_SWAP_FEE}], got {self.swap_fee!r}")

    @property
    def k(self) -> float:
        return self.reserve_native * self.reserve_lst


def pool_price(pool: Pool) -> float:
    """Marginal price in native per LST."""
    return pool.reserve_native / pool.reserve_lst


def pool_value(pool: Pool) -> float:
    """Both reserves marked at the pool's own marginal price."""
    return 2.0 * pool.reserve_native


def swap(pool: Pool, side: Side, amount_in: float) -> tuple[float, Pool]:
    if not amount_in > 0:
        raise ValidationError(f"swap amount must be positive, got {amount_in!r}")
    a = amount_in * (1.0 - pool.swap_fee)
    if side is Side.BUY_LST:
        r_in, r_out = pool.reserve_native, pool.reserve_lst
    else:
        r_in, r_out = pool.reserve_lst, pool.reserve_native
    out = r_out * a / (r_in + a)
    # r_out - out without cancellation
    left = r_out * r_in / (r_in + a)
    if not (out < r_out and left > 0):
        raise PoolDrainError("swap would drain the pool")
    if side is Side.BUY_LST:
        return out, replace(pool, reserve_native=r_in + amount_in, reserve_lst=left)
    return out, replace(pool, reserve_lst=r_in + amount_in, reserve_native=left)


def _positive_root(a: float, b: float, c: float) -> float:
    # c < 0, a > 0, b > 0; cancellation-free form of the quadratic formula
    return -2.0 * c / (b + math.sqrt(b * b - 4.0 * a * c))


def parity_trade_size(pool: Pool, fair: float) -> tuple[Side, float] | None:
    """Input amount that moves the marginal price exactly onto ``fair``.

    For a buy the amount is native; for a sell it is LST. With zero fee the
    buy size reduces to ``sqrt(k * fair) - reserve_native``.
    """
    rn, rl, f = pool.reserve_native, pool.reserve_lst, pool.swap_fee
    price = rn / rl
    if price < fair:
        return Side.BUY_LST, _positive_root(1.0 - f, rn * (2.0 - f), rn * rn - fair * rl * rn)
    if price > fair:
        return Side.SELL_LST, _positive_root(1.0 - f, rl * (2.0 - f), rl * rl - rn * rl / fair)
    return None


@dataclass(frozen=True)
class ArbitrageLimits:
    max_trade: float = math.inf  # native notional per step
    tolerance: float = 1e-3
    burn_enabled: bool = True

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValidationError("arbitrage tolerance must be positive")
        if not self.max_trade > 0:
            raise ValidationError("max_trade must be positive")


@dataclass(frozen=True)
class Trade:
    day: int
    kind: str
    side: Side
    amount_in: float
    amount_out: float
    fair_value: float
    profit: float


def arbitrage_step(pool: Pool, fair: float, limits: ArbitrageLimits, day: int = 0) -> tuple[Trade | None, Pool]:
    """One arbitrage pass.

    Below the band: buy LST in the pool (to be burnt at fair value). Above
    it: mint at fair value and sell into the pool. Trades restore parity
    when ``max_trade`` allows, otherwise trade ``max_trade``.
    """
    if not fair > 0:
        raise ValidationError("fair value must be positive")
    price = pool_price(pool)
    if price < fair * (1.0 - limits.tolerance):
        if not limits.burn_enabled:
            return None, pool
        _, size = parity_trade_size(pool, fair)
        size = min(size, limits.max_trade)
        out, new = swap(pool, Side.BUY_LST, size)
        return Trade(day, "arbitrage", Side.BUY_LST, size, out, fair, out * fair - size), new
    if price > fair * (1.0 + limits.tolerance):
        _, size = parity_trade_size(pool, fair)
        size = min(size, limits.max_trade / fair)
        out, new = swap(pool, Side.SELL_LST, size)
        return Trade(day, "arbitrage", Side.SELL_LST, size, out, fair, out - size * fair), new
    return None, pool


# --------------------------------------------------------------------------
# LP compounding strategy


@dataclass(frozen=True)
class StrategyPosition:
    lp_fraction: float
    lst_minted: float
    incentive_rate: float = 0.0
    incentive_index: float = 1.0
    day: int = 0
    trades: tuple[Trade, ...] = ()


def zap_swap_amount(reserve_in: float, amount: float, fee: float) -> float:
    """Portion of a single-sided deposit to swap so the remainder matches the
    post-swap pool ratio."""
    b = reserve_in * (2.0 - fee)
    return (math.sqrt(b * b + 4.0 * (1.0 - fee) * reserve_in * amount) - b) / (2.0 * (1.0 - fee))


def compounding_strategy(
    state: LspState,
    pool: Pool,
    native_in: float,
    config: LspConfig | None = None,
    lp_incentive_rate: float = 0.0,
) -> tuple[StrategyPosition, LspState, Pool]:
    """Mint LST, provide it as pool liquidity, and stake the LP position.

    The LST is deposited single-sided: part of it is swapped to native first
    and the remainder added in proportion to the pool reserves.
    """
    if not native_in > 0:
        raise ValidationError(f"deposit must be positive, got {native_in!r}")
    daily_rate(lp_incentive_rate)  # range check
    lst, state = _lsp.mint(state, native_in, config)
    s = zap_swap_amount(pool.reserve_lst, lst, pool.swap_fee)
    native_part, pool = swap(pool, Side.SELL_LST, s)
    fair = _lsp.fair_value(state)
    trades = (
        Trade(0, "mint", Side.BUY_LST, native_in, lst, fair, 0.0),
        Trade(0, "zap", Side.SELL_LST, s, native_part, fair, 0.0),
    )
    lst_part = lst - s
    fraction_of_new = lst_part / (pool.reserve_lst + lst_part)
    pool = replace(pool, reserve_native=pool.reserve_native + native_part, reserve_lst=pool.reserve_lst + lst_part)
    return StrategyPosition(fraction_of_new, lst, lp_incentive_rate, trades=trades), state, pool


def advance_strategy(position: StrategyPosition, days: int = 1) -> StrategyPosition:
    growth = (1.0 + daily_rate(position.incentive_rate)) ** days
    return replace(position, incentive_index=position.incentive_index * growth, day=position.day + days)


def strategy_value(position: StrategyPosition, pool: Pool) -> float:
    return position.lp_fraction * pool_value(pool) * position.incentive_index


# --------------------------------------------------------------------------
# Scenario runner


@dataclass(frozen=True)
class ArbitrageConfig:
    enabled: bool = True
    max_trade: float = math.inf
    tolerance: float = 1e-3
    max_lockup_days: int = 7


@dataclass(frozen=True)
class ScenarioConfig:
    chain: ChainProfile
    lsp: LspConfig
    horizon_days: int = 365
    seed: int = 0
    initial_deposit: float = 1000.0
    pool: Pool = field(default_factory=lambda: Pool(1e6, 1e6))
    arbitrage: ArbitrageConfig = field(default_factory=ArbitrageConfig)
    mev_stream: tuple[float, ...] = ()
    shocks: tuple[tuple[int, float], ...] = ()
    event_markers: tuple[tuple[int, str], ...] = ()
    start_date: date | None = None
    market_prices: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.horizon_days <= 0:
            raise ConfigError("horizon_days must be positive")
        if not self.initial_deposit > 0:
            raise ConfigError("initial_deposit must be positive")
        if not self.arbitrage.tolerance > 0:
            raise ConfigError("arbitrage tolerance must be positive")
        if any(m < 0 for m in self.mev_stream):
            raise ConfigError("MEV amounts must be non-negative")
        for day, _ in self.shocks:
            if not 1 <= day <= self.horizon_days:
                raise ConfigError(f"shock day {day} outside 1..{self.horizon_days}")
        if self.market_prices is not None:
            if len(self.market_prices) < self.horizon_days + 1:
                raise ConfigError("exogenous price series must cover day 0 through the horizon")
            if any(not p > 0 for p in self.market_prices):
                raise ConfigError("exogenous prices must be positive")

    def mev_on(self, day: int) -> float:
        return self.mev_stream[day - 1] if day - 1 < len(self.mev_stream) else 0.0


TRACE_COLUMNS = ("day", "fair_value", "market_value", "premium", "lst_return", "staking_return", "excess_return")


@dataclass(frozen=True)
class TraceRow:
    day: int
    fair_value: float
    market_value: float
    premium: float
    lst_return: float
    staking_return: float
    excess_return: float


@dataclass
class ScenarioTrace:
    rows: list[TraceRow]
    event_markers: tuple[tuple[int, str], ...] = ()
    trades: list[Trade] = field(default_factory=list)
    states: list[tuple[int, LspState]] = field(default_factory=list)
    treasury_check: list[tuple[float, float]] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for r in self.rows:
                w.writerow([r.day] + [repr(float(getattr(r, c))) for c in TRACE_COLUMNS[1:]])

    def write_events(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("day", "label"))
            w.writerows(self.event_markers)

    def write_trades(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("day", "kind", "side", "amount_in", "amount_out", "fair_value", "profit"))
            for t in self.trades:
                w.writerow((t.day, t.kind, t.side.value, repr(t.amount_in), repr(t.amount_out), repr(t.fair_value), repr(t.profit)))


def _close(a: float, b: float, scale: float, rtol: float = 1e-9) -> bool:
    return abs(a - b) <= rtol * max(scale, 1.0)


def run_scenario(config: ScenarioConfig) -> ScenarioTrace:
    """Simulate ``horizon_days`` days and return the daily trace.

    Per day: accrue and distribute staking rewards, draw slashing, release
    matured unstakes, apply demand shocks, arbitrage, record. The protocol's
    stake on the chain always equals its reserves; conservation of native
    tokens and of LST supply is audited every day.
    """
    chain, lcfg = config.chain, config.lsp
    rng = np.random.default_rng(config.seed)
    exogenous = config.market_prices is not None

    state = LspState()
    _, state = _lsp.mint(state, config.initial_deposit, lcfg)
    pool = config.pool
    pool_lst, state = _lsp.mint(state, pool.reserve_lst, lcfg)  # liquidity provider's seed LST
    pool = replace(pool, reserve_lst=pool_lst)
    position = StakingPosition(staked=state.reserves)

    holders_lst = state.supply - pool.reserve_lst
    holders_native = 0.0
    arb_native = 0.0
    arb_lst = 0.0

    def native_total() -> float:
        return (position.staked + position.pending + state.treasury + state.collateral
                + pool.reserve_native + arb_native + holders_native)

    expected_native = native_total()
    included_rewards = 0.0

    burn_ok = chain.lockup_days is not None and chain.lockup_days <= config.arbitrage.max_lockup_days
    limits = ArbitrageLimits(config.arbitrage.max_trade, config.arbitrage.tolerance, burn_ok)
    shocks: dict[int, list[float]] = {}
    for d, amt in config.shocks:
        shocks.setdefault(d, []).append(amt)

    market0 = config.market_prices[0] if exogenous else pool_price(pool)
    balance_factor = 1.0  # rebase balance growth of one original token
    reward_per_token = 0.0  # dual reward tokens credited per principal token
    prev_index = market0
    baseline = 1.0

    trace = ScenarioTrace(rows=[], event_markers=tuple(config.event_markers))
    trace.states.append((0, state))

    for day in range(1, config.horizon_days + 1):
        annual = chain.annual_rate(day - 1, config.start_date)
        stake_ret = daily_rate(annual)
        accrued = accrue(position, chain, config.start_date)
        gross = accrued.staked - position.staked
        mev = config.mev_on(day)
        supply_before = state.supply
        state = _lsp.distribute_rewards(state, lcfg, gross, mev)
        included = _lsp.included_reward(lcfg, gross, mev)
        included_rewards += included
        expected_native += included
        position = replace(accrued, staked=state.reserves)
        if lcfg.model is Model.REBASE and supply_before > 0:
            g = state.supply / supply_before
            balance_factor *= g
            pool = replace(pool, reserve_lst=pool.reserve_lst * g)
            holders_lst *= g
            arb_lst *= g
        elif lcfg.model is Model.DUAL and supply_before > 0:
            reward_per_token += included * (1.0 - lcfg.fee) / supply_before

        if rng.random() < chain.slashing.probability:
            position, loss = slash(position, chain.slashing.penalty)
            before = state.collateral
            state = _lsp.apply_slashing_loss(state, lcfg, loss)
            position = replace(position, staked=position.staked + (before - state.collateral))
            expected_native -= loss

        position, released = process_releases(position)
        arb_native += released

        if not exogenous:
            for amt in shocks.get(day, ()):
                if amt > 0:
                    out, pool = swap(pool, Side.BUY_LST, amt)
                    holders_native -= amt
                    holders_lst += out
                elif amt < 0:
                    lst_in = -amt / pool_price(pool)
                    out, pool = swap(pool, Side.SELL_LST, lst_in)
                    holders_lst -= lst_in
                    holders_native += out
                trace.trades.append(Trade(day, "shock", Side.BUY_LST if amt > 0 else Side.SELL_LST, abs(amt), out, _lsp.fair_value(state), 0.0))

            if config.arbitrage.enabled:
                fair = _lsp.fair_value(state)
                trade, pool = arbitrage_step(pool, fair, limits, day)
                if trade is not None:
                    trace.trades.append(trade)
                    if trade.side is Side.BUY_LST:
                        arb_native -= trade.amount_in
                        native_out, state = _lsp.burn(state, trade.amount_out, chain)
                        position = request_unstake(position, native_out, chain)
                    else:
                        cost = trade.amount_in * fair
                        posted = state.collateral
                        minted, state = _lsp.mint(state, cost, lcfg)
                        expected_native += state.collateral - posted
                        position = replace(position, staked=position.staked + cost)
                        arb_native += trade.amount_out - cost
                        arb_lst += minted - trade.amount_in
                    position, released = process_releases(position)
                    arb_native += released

        # conservation audit
        if not _close(native_total(), expected_native, expected_native):
            raise AccountingError(f"day {day}: native total {native_total()} != expected {expected_native}")
        lst_held = pool.reserve_lst + holders_lst + arb_lst
        if not _close(lst_held, state.supply, state.supply):
            raise AccountingError(f"day {day}: LST held {lst_held} != supply {state.supply}")
        if not _close(position.staked, state.reserves, state.reserves):
            raise AccountingError(f"day {day}: stake {position.staked} != reserves {state.reserves}")
        trace.treasury_check.append((state.treasury, lcfg.fee * included_rewards))

        market = config.market_prices[day] if exogenous else pool_price(pool)
        fair = _lsp.fair_value(state)
        if lcfg.model is Model.REBASE:
            index = market * balance_factor
        elif lcfg.model is Model.DUAL:
            index = market + reward_per_token
        else:
            index = market
        lst_ret = index / prev_index - 1.0
        prev_index = index
        baseline *= 1.0 + stake_ret
        premium = 100.0 * (index / market0 - baseline)
        trace.rows.append(TraceRow(day, fair, market, premium, lst_ret, stake_ret, lst_ret - stake_ret))
        trace.states.append((day, state))

    return trace


# --------------------------------------------------------------------------
# Config files


def _pairs(items, kind: str, cast) -> tuple:
    out = []
    for item in items or ():
        if not isinstance(item, dict) or "day" not in item:
            raise ConfigError(f"each {kind} entry needs a 'day'")
        out.append((int(item["day"]), cast(item)))
    return tuple(out)


def scenario_from_mapping(cfg: dict, base: Path = Path(".")) -> ScenarioConfig:
    """Build a scenario from parsed config keys (schema in the README)."""
    from .ingest import load_price_series

    chain_cfg = cfg.get("chain")
    if isinstance(chain_cfg, str):
        if chain_cfg in CHAIN_PRESETS:
            chain = CHAIN_PRESETS[chain_cfg]
        else:
            from .chain import load_chain_profile
            chain = load_chain_profile(_cfg.resolve(base, chain_cfg))
    elif isinstance(chain_cfg, dict):
        chain = profile_from_mapping(chain_cfg, base)
    else:
        raise ConfigError("scenario needs a [chain] table or a chain preset/profile path")

    lcfg = _lsp.config_from_mapping(cfg.get("lsp", {}), chain)

    p = cfg.get("pool", {})
    a = cfg.get("arbitrage", {})
    mev = cfg.get("mev", {})
    try:
        pool = Pool(
            _cfg.get_float(p, "reserve_native", 1e6),
            _cfg.get_float(p, "reserve_lst", 1e6),
            _cfg.get_float(p, "swap_fee", 0.0),
        )
        arb = ArbitrageConfig(
            enabled=_cfg.get_bool(a, "enabled", True),
            max_trade=_cfg.get_float(a, "max_trade", math.inf),
            tolerance=_cfg.get_float(a, "tolerance", 1e-3),
            max_lockup_days=int(a.get("max_lockup_days", 7)),
        )
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None

    horizon = int(cfg.get("horizon_days", 365))
    if "stream" in mev:
        stream = tuple(float(x) for x in mev["stream"])
    else:
        stream = (_cfg.get_float(mev, "daily", 0.0),) * horizon

    prices = None
    if "market_prices" in cfg:
        series = load_price_series(_cfg.resolve(base, cfg["market_prices"]))
        prices = tuple(float(x) for x in series.price_native)

    start = cfg.get("start_date")
    if isinstance(start, str):
        start = date.fromisoformat(start)

    return ScenarioConfig(
        chain=chain,
        lsp=lcfg,
        horizon_days=horizon,
        seed=int(cfg.get("seed", 0)),
        initial_deposit=_cfg.get_float(cfg, "initial_deposit", 1000.0),
        pool=pool,
        arbitrage=arb,
        mev_stream=stream,
        shocks=_pairs(cfg.get("shocks"), "shock", lambda d: float(d["amount"])),
        event_markers=_pairs(cfg.get("events"), "event", lambda d: str(d.get("label", ""))),
        start_date=start,
        market_prices=prices,
    )


def load_scenario(path: str | Path, seed: int | None = None) -> ScenarioConfig:
    path = Path(path)
    cfg = _cfg.load_config(path)
    if seed is not None:
        cfg["seed"] = seed
    return scenario_from_mapping(cfg, path.parent)
