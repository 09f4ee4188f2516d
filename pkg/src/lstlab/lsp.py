"""Liquid staking protocol token accounting.

Three ways of passing staking rewards to token holders are supported:

* ``REBASE``: the token stays at 1 native and supply is inflated.
* ``REWARD``: supply is fixed and the redemption value per token rises.
* ``DUAL``: the principal token stays at 1 native and a separate reward
  token, worth 1 native per unit, is credited.

All functions are pure: they take an :class:`LspState` and return a new one.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

from . import config as _cfg
from .chain import ChainProfile
from .errors import (
    ConfigError,
    InsufficientSupplyError,
    RedemptionUnsupportedError,
    UndefinedFairValueError,
    ValidationError,
)

DEFAULT_FEE = 0.10


class Model(enum.Enum):
    REBASE = "rebase"
    REWARD = "reward"
    DUAL = "dual"


class ValidatorSelection(enum.Enum):
    WHITELIST = "whitelist"
    CREDENTIAL = "credential"
    COLLATERAL = "collateral"


@dataclass(frozen=True)
class LspConfig:
    model: Model = Model.REWARD
    fee: float = DEFAULT_FEE
    include_mev: bool = True
    validator_selection: ValidatorSelection = ValidatorSelection.WHITELIST
    collateral_ratio: float = 0.0
    chain: ChainProfile | None = None

    def __post_init__(self):
        if not 0.0 <= self.fee <= 1.0:
            raise ValidationError(f"fee must be in [0, 1], got {self.fee!r}")
        if not 0.0 <= self.collateral_ratio <= 1.0:
            raise ValidationError(f"collateral_ratio must be in [0, 1], got {self.collateral_ratio!r}")
        uses_collateral = self.validator_selection is ValidatorSelection.COLLATERAL
        if uses_collateral != (self.collateral_ratio > 0):
            raise ValidationError("collateral_ratio > 0 is required exactly when validator_selection is collateral")


@dataclass(frozen=True)
class LspState:
    reserves: float = 0.0
    supply: float = 0.0
    reward_supply: float = 0.0
    collateral: float = 0.0
    treasury: float = 0.0
    shortfall: bool = False

    def __post_init__(self):
        for name in ("reserves", "supply", "reward_supply", "collateral", "treasury"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0, got {getattr(self, name)!r}")


def fair_value(state: LspState) -> float:
    """Native tokens redeemable per principal token.

    Reserves backing the reward token (``DUAL`` only) are excluded, so the
    principal token of a dual-token protocol holds its 1:1 peg.
    """
    if state.supply <= 0:
        raise UndefinedFairValueError("fair value is undefined with zero supply")
    return (state.reserves - state.reward_supply) / state.supply


def _fair_or_bootstrap(state: LspState) -> float:
    return fair_value(state) if state.supply > 0 else 1.0


def mint(state: LspState, native_in: float, config: LspConfig | None = None) -> tuple[float, LspState]:
    """Deposit native tokens and receive LSTs at the current fair value.

    Under collateral-based validator selection, validators post
    ``collateral_ratio * native_in`` alongside the deposit.
    """
    if not native_in > 0:
        raise ValidationError(f"deposit must be positive, got {native_in!r}")
    lst_out = native_in / _fair_or_bootstrap(state)
    collateral = state.collateral
    if config is not None and config.validator_selection is ValidatorSelection.COLLATERAL:
        collateral += config.collateral_ratio * native_in
    return lst_out, replace(
        state, reserves=state.reserves + native_in, supply=state.supply + lst_out, collateral=collateral
    )


def burn(state: LspState, lst_in: float, chain: ChainProfile | None = None) -> tuple[float, LspState]:
    """Redeem LSTs for native tokens at fair value.

    The native amount still has to be unstaked on the chain; callers route it
    through :func:`lstlab.chain.request_unstake`.
    """
    if chain is not None and chain.lockup_days is None:
        raise RedemptionUnsupportedError(f"{chain.name}: redemption impossible while stake is locked indefinitely")
    if not lst_in > 0:
        raise ValidationError(f"burn amount must be positive, got {lst_in!r}")
    if lst_in > state.supply:
        raise InsufficientSupplyError(f"cannot burn {lst_in} of supply {state.supply}")
    if lst_in == state.supply:
        native_out = state.reserves - state.reward_supply
        return native_out, replace(state, reserves=state.reward_supply, supply=0.0)
    native_out = lst_in * fair_value(state)
    return native_out, replace(
        state, reserves=max(state.reserves - native_out, 0.0), supply=state.supply - lst_in
    )


def redeem_reward_tokens(state: LspState, amount: float) -> tuple[float, LspState]:
    """Convert reward tokens back to native at face value."""
    if not 0 < amount <= state.reward_supply:
        raise InsufficientSupplyError(f"cannot redeem {amount} of reward supply {state.reward_supply}")
    return amount, replace(
        state, reserves=state.reserves - amount, reward_supply=state.reward_supply - amount
    )


def included_reward(config: LspConfig, gross_reward: float, mev_reward: float) -> float:
    return gross_reward + (mev_reward if config.include_mev else 0.0)


def distribute_rewards(state: LspState, config: LspConfig, gross_reward: float, mev_reward: float = 0.0) -> LspState:
    if gross_reward < 0 or mev_reward < 0:
        raise ValidationError("rewards must be non-negative")
    total = included_reward(config, gross_reward, mev_reward)
    fee = total * config.fee
    net = total - fee
    reserves = state.reserves + net
    treasury = state.treasury + fee
    if config.model is Model.REBASE:
        # Balances scale by supply'/supply; this also undoes any earlier
        # slashing discount (negative rebase).
        supply = reserves if state.supply > 0 else state.supply
        return replace(state, reserves=reserves, supply=supply, treasury=treasury)
    if config.model is Model.REWARD:
        return replace(state, reserves=reserves, treasury=treasury)
    return replace(state, reserves=reserves, reward_supply=state.reward_supply + net, treasury=treasury)


def apply_slashing_loss(state: LspState, config: LspConfig, loss: float) -> LspState:
    """Charge a slashing loss to collateral first (collateral mode), then reserves."""
    if loss < 0:
        raise ValidationError("loss must be non-negative")
    if loss == 0:
        return state
    collateral = state.collateral
    if config.validator_selection is ValidatorSelection.COLLATERAL:
        absorbed = min(collateral, loss)
        collateral -= absorbed
        loss -= absorbed
    reserves = state.reserves - loss
    shortfall = state.shortfall or reserves < 0
    return replace(state, collateral=collateral, reserves=max(reserves, 0.0), shortfall=shortfall)


def holder_wealth(state: LspState, share: float) -> float:
    """Redeemable native value of a holder owning ``share`` of every token class.

    Under rebasing the holder's balance grows with supply, so a constant
    share of supply is the right notion of "the same holder" for all models.
    """
    principal = share * (state.reserves - state.reward_supply) if state.supply > 0 else 0.0
    return principal + share * state.reward_supply


def config_from_mapping(cfg: dict, chain: ChainProfile | None = None) -> LspConfig:
    try:
        model = Model(str(cfg.get("model", "reward")).lower())
        selection = ValidatorSelection(str(cfg.get("validator_selection", "whitelist")).lower())
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    try:
        return LspConfig(
            model=model,
            fee=_cfg.get_float(cfg, "fee", DEFAULT_FEE),
            include_mev=_cfg.get_bool(cfg, "include_mev", True),
            validator_selection=selection,
            collateral_ratio=_cfg.get_float(cfg, "collateral_ratio", 0.0),
            chain=chain,
        )
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


def load_lsp_config(path: str | Path) -> LspConfig:
    """Load an LSP config; ``chain`` may name a preset or a chain profile file."""
    from .chain import CHAIN_PRESETS, load_chain_profile

    path = Path(path)
    cfg = _cfg.load_config(path)
    chain = None
    ref = cfg.get("chain")
    if isinstance(ref, str):
        chain = CHAIN_PRESETS[ref] if ref in CHAIN_PRESETS else load_chain_profile(_cfg.resolve(path.parent, ref))
    return config_from_mapping(cfg, chain)


STATE_COLUMNS = ("day", "reserves", "supply", "reward_supply", "collateral", "treasury", "fair_value")


def write_state_csv(rows: Iterable[tuple[int, LspState]], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STATE_COLUMNS)
        for day, s in rows:
            fv = fair_value(s) if s.supply > 0 else math.nan
            w.writerow([day] + [repr(float(v)) for v in (s.reserves, s.supply, s.reward_supply, s.collateral, s.treasury, fv)])
