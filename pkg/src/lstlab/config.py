"""Key/value config files (TOML syntax: ``key = value``, dotted keys allowed)."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError

INFINITE_WORDS = {"inf", "infinite", "infinity", "∞"}


def load_config(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def get_float(cfg: Mapping[str, Any], key: str, default: float | None = None) -> float:
    value = cfg.get(key, default)
    if value is None:
        raise ConfigError(f"missing required key {key!r}")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key!r} must be a number, got {value!r}")
    value = float(value)
    if math.isnan(value):
        raise ConfigError(f"{key!r} is NaN")
    return value


def get_bool(cfg: Mapping[str, Any], key: str, default: bool) -> bool:
    value = cfg.get(key, default)
    if not isinstance(value, bool):
        raise ConfigError(f"{key!r} must be true or false, got {value!r}")
    return value


def parse_lockup(value: Any) -> int | None:
    """``None`` means the stake can never be withdrawn."""
    if isinstance(value, str):
        if value.strip().lower() in INFINITE_WORDS:
            return None
        try:
            value = int(value)
        except ValueError:
            raise ConfigError(f"lockup_days must be an integer or 'infinite', got {value!r}") from None
    if isinstance(value, float) and math.isinf(value):
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
        raise ConfigError(f"lockup_days must be an integer or 'infinite', got {value!r}")
    if value < 0:
        raise ConfigError("lockup_days must be >= 0")
    return int(value)


def resolve(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p
