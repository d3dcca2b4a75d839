"""User settings for IMEAC runs.

Each :class:`Option` names the run field it seeds, so ``config set sim.step``
changes the default ``--step`` of every analysis command. Values live in
``config.json`` under ``$IMEAC_CONFIG_DIR`` (``~/.imeac`` by default).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple

CONFIG_ENV_VAR = "IMEAC_CONFIG_DIR"
CASE_DIR_ENV_VAR = "IMEAC_CASE_DIR"
CONFIG_FILENAME = "config.json"
LOG_LEVEL_VALUES = ("debug", "info", "warning", "error", "critical")

__all__ = [
    "CASE_DIR_ENV_VAR",
    "CONFIG_ENV_VAR",
    "ConfigError",
    "LOG_LEVEL_VALUES",
    "OPTIONS",
    "case_dir",
    "config_dir",
    "config_path",
    "get_value",
    "list_config",
    "run_defaults",
    "set_value",
    "unset_value",
]


class ConfigError(RuntimeError):
    """Raised when configuration cannot be read or updated."""


def config_dir() -> Path:
    override = os.environ.get(CONFIG_ENV_VAR)
    return Path(override).expanduser() if override else Path.home() / ".imeac"


def config_path() -> Path:
    return config_dir() / CONFIG_FILENAME


def case_dir() -> Optional[Path]:
    """Directory searched for ``--case NAME`` before the bundled cases."""

    override = os.environ.get(CASE_DIR_ENV_VAR)
    return Path(override).expanduser() if override else None


def _read_settings() -> Dict[str, Any]:
    path = config_path()
    if not path.exists():
        return {}
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"Config file {path} is not valid JSON") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"Config file {path} must contain a JSON object")
    return payload


def _write_settings(data: Dict[str, Any]) -> None:
    path = config_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True))


def _log_level(value: str) -> str:
    normalized = value.strip().lower()
    normalized = "warning" if normalized == "warn" else normalized
    if normalized not in LOG_LEVEL_VALUES:
        raise ConfigError(
            f"Unsupported log level '{value}'. "
            f"Choose from {', '.join(LOG_LEVEL_VALUES)}"
        )
    return normalized


def _bounded(kind: type, lower: float, *, strict: bool) -> Callable[[str], Any]:
    """Parser for ``kind`` values above ``lower`` (or at it when not ``strict``)."""

    relation = "greater than" if strict else "greater than or equal to"
    noun = "an integer" if kind is int else "a number"

    def parse(value: str) -> Any:
        try:
            parsed = kind(value)
        except ValueError as exc:
            raise ConfigError(f"Expected {noun}") from exc
        if not math.isfinite(parsed) or parsed < lower or (strict and parsed == lower):
            raise ConfigError(f"Value must be a finite number {relation} {lower:g}")
        return parsed

    return parse


_positive = _bounded(float, 0.0, strict=True)


def _fraction(value: str) -> float:
    parsed = _positive(value)
    if parsed > 1.0:
        raise ConfigError("Value must not exceed 1")
    return parsed


_JSON_TYPES: Dict[str, Tuple[type, ...]] = {
    "string": (str,),
    "integer": (int,),
    "number": (int, float),
}


@dataclass(frozen=True)
class Option:
    key: str
    parser: Callable[[str], Any]
    default: Any
    description: str
    value_type: str
    run_field: Optional[str] = None
    choices: Optional[Tuple[Any, ...]] = None

    def validate_user_value(self, value: Any) -> Any:
        """Check a value read from ``config.json`` against ``config set`` rules."""

        if value is None:
            return self.default
        expected = _JSON_TYPES[self.value_type]
        if isinstance(value, bool) or not isinstance(value, expected):
            raise ConfigError(
                f"Config key '{self.key}' expects a {self.value_type} value"
            )
        return self.parser(str(value))


def _option(
    key: str, parser, default, description, value_type="number", run_field=None, **kw
):
    return key, Option(key, parser, default, description, value_type, run_field, **kw)


OPTIONS: Dict[str, Option] = dict(
    [
        _option(
            "log.level",
            _log_level,
            "info",
            "Default log level when --log-level is not provided.",
            value_type="string",
            choices=LOG_LEVEL_VALUES,
        ),
        _option(
            "sim.step",
            _positive,
            1e-3,
            "Fixed Runge-Kutta integration step in seconds.",
            run_field="step",
        ),
        _option(
            "sim.t_end",
            _positive,
            2.0,
            "Simulation horizon in seconds from fault inception.",
            run_field="tend",
        ),
        _option(
            "identify.window",
            _positive,
            0.05,
            "Observation window after clearing used to rank critical machines.",
            run_field="window",
        ),
        _option(
            "identify.min_excursion",
            _positive,
            1e-6,
            "Angle excursion (rad) below which a trajectory counts as undisturbed.",
            run_field="min_excursion",
        ),
        _option(
            "identify.energy_share",
            _fraction,
            0.05,
            "Share of the largest kinetic energy that also marks a machine critical.",
            run_field="energy_share",
        ),
        _option(
            "detect.eps_f",
            _positive,
            1e-6,
            "Accelerating-power tolerance (p.u.) for event classification.",
            run_field="eps_f",
        ),
        _option(
            "detect.eps_omega",
            _positive,
            1e-6,
            "Relative-speed tolerance (rad/s) for event classification.",
            run_field="eps_omega",
        ),
        _option(
            "detect.eps_energy",
            _positive,
            1e-6,
            "Absolute energy tolerance (p.u. rad) for area closure checks.",
            run_field="eps_energy",
        ),
        _option(
            "assess.oracle_threshold",
            _positive,
            2.0 * math.pi,
            "COI angle (rad) beyond which the trajectory oracle calls a case unstable.",
            run_field="oracle_threshold",
        ),
        _option(
            "assess.horizon_extensions",
            _bounded(int, 0, strict=False),
            1,
            "Number of horizon doublings tried before an undecided verdict stands.",
            value_type="integer",
            run_field="horizon_extensions",
        ),
        _option(
            "cct.tolerance",
            _positive,
            1e-3,
            "Target width (s) of the critical clearing time bracket.",
            run_field="tol",
        ),
        _option(
            "run.jobs",
            _bounded(int, 1, strict=False),
            1,
            "Worker processes used by sweep and multi-bus CCT runs.",
            value_type="integer",
            run_field="jobs",
        ),
    ]
)


def _get_option(key: str) -> Option:
    try:
        return OPTIONS[key]
    except KeyError as exc:
        raise ConfigError(f"Unknown config key '{key}'") from exc


def _user_values() -> Dict[str, Any]:
    return {
        key: OPTIONS[key].validate_user_value(value)
        for key, value in _read_settings().items()
        if key in OPTIONS
    }


def list_config() -> Dict[str, Dict[str, Any]]:
    """Return metadata keyed by option name."""

    user = _user_values()
    return {
        key: {
            "value": user.get(key, option.default),
            "default": option.default,
            "description": option.description,
            "type": option.value_type,
            "choices": option.choices,
            "run_field": option.run_field,
            "source": "user" if key in user else "default",
        }
        for key, option in OPTIONS.items()
    }


def run_defaults() -> Dict[str, Any]:
    """Effective default for every run field an option seeds."""

    user = _user_values()
    return {
        option.run_field: user.get(key, option.default)
        for key, option in OPTIONS.items()
        if option.run_field is not None
    }


def get_value(key: str) -> Any:
    option = _get_option(key)
    return _user_values().get(key, option.default)


def set_value(key: str, raw_value: str) -> Any:
    parsed = _get_option(key).parser(raw_value)
    payload = _read_settings()
    payload[key] = parsed
    _write_settings(payload)
    return parsed


def unset_value(key: str) -> None:
    _get_option(key)
    payload = _read_settings()
    if payload.pop(key, None) is not None:
        _write_settings(payload)
