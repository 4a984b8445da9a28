"""Flat key/value configuration and policy construction.

A config file is a TOML document with top-level scalar keys only, e.g.::

    s = 0.6
    q = 0.2
    p1_db = 0.0
    p2_db = 10.0
    mode = "fixed"

Keys not set fall back to :data:`DEFAULTS`. Powers may be given in dB
(``p1_db``/``p2_db``) or linearly (``p1``/``p2``); dB wins when both appear.
"""

from __future__ import annotations

import math
import sys
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .effrate import FixedRates, LinkPolicy, VariableRate
from .fbcode import FrameConfig
from .numerics import FadingDist
from .sensing import ActivityChain, InterferenceBudget, SensingConfig

__all__ = ["ConfigError", "DEFAULTS", "load_config", "merge_params", "build_policy", "build_budget", "db_to_linear"]


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key when known."""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


DEFAULTS: dict[str, Any] = {
    # primary activity
    "s": 0.6,
    "q": 0.2,
    # sensing and framing
    "sense_N": 1e-3,
    "bandwidth_B": 1e4,
    "frame_T": 0.1,
    "threshold_lambda": 0.1,
    "noise_var": 0.05,
    "interference_var": 0.12,
    "snr_scaling": "none",
    # transmission
    "p1_db": 0.0,
    "p2_db": 10.0,
    "mode": "fixed",
    "r1": 0.0015,
    "r2": 0.03,
    "eps": 1e-3,
    "theta": 0.01,
    "nested": "independent",
    "zero_theta_weights": "closed-form",
    # fading
    "fading": "exponential",
    "mean_power": 1.0,
    "quad_order": 96,
    # interference protection (i0_over_gain <= 0 disables the check)
    "i0_over_gain": 0.0,
    "peak_p1": math.inf,
    "peak_p2": math.inf,
    "feasibility_mode": "avg-interference",
    # simulation
    "arrival_rate": -1.0,
    "arrival_scale": 1.0,
    "horizon_frames": 1_000_000,
    "q_step": 25.0,
    "q_max": 800.0,
    "trace_frames": 0,
}

_ALIASES = {"lambda": "threshold_lambda", "N": "sense_N", "T": "frame_T", "B": "bandwidth_B"}
_CHOICES = {
    "mode": ("fixed", "variable"),
    "snr_scaling": ("none", "energy-constrained"),
    "nested": ("independent", "joint"),
    "zero_theta_weights": ("closed-form", "stationary"),
    "fading": ("exponential", "point"),
    "feasibility_mode": ("avg-interference", "bound-p1"),
}
_INT_KEYS = {"quad_order", "horizon_frames", "trace_frames"}
_EXTRA_FLOAT_KEYS = {"p1", "p2"}


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def _coerce(key: str, value: Any) -> Any:
    if key in _CHOICES:
        if value not in _CHOICES[key]:
            raise ConfigError(f"must be one of {', '.join(_CHOICES[key])}, got {value!r}", key)
        return value
    if isinstance(value, bool):
        raise ConfigError(f"expected a number, got {value!r}", key)
    if key in _INT_KEYS:
        try:
            as_float = float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"expected an integer, got {value!r}", key) from None
        if not as_float.is_integer():
            raise ConfigError(f"expected an integer, got {value!r}", key)
        return int(as_float)
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"expected a number, got {value!r}", key) from None


def merge_params(*layers: Mapping[str, Any] | None) -> dict[str, Any]:
    """Overlay ``layers`` on the defaults, validating names and types."""
    params = dict(DEFAULTS)
    for layer in layers:
        for raw_key, value in (layer or {}).items():
            key = _ALIASES.get(raw_key, raw_key)
            if key not in DEFAULTS and key not in _EXTRA_FLOAT_KEYS:
                raise ConfigError("unknown key", raw_key)
            if isinstance(value, (dict, list)):
                raise ConfigError("nested values are not supported", raw_key)
            params[key] = _coerce(key, value)
            if key in ("p1", "p2"):
                # an explicit linear power supersedes the dB default
                params[f"{key}_db"] = 10.0 * math.log10(params[key]) if params[key] > 0 else -math.inf
    return params


def load_config(path) -> dict[str, Any]:
    """Read a flat TOML file; raises :class:`ConfigError` on syntax errors."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return data


def build_policy(params: Mapping[str, Any]) -> LinkPolicy:
    """Turn merged parameters into a validated :class:`LinkPolicy`."""
    p = dict(params)

    def guard(fn, field):
        try:
            return fn()
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc), field) from exc

    chain = guard(lambda: ActivityChain(s=p["s"], q=p["q"]), "s/q")
    sensing = guard(
        lambda: SensingConfig(
            sense_duration_N=p["sense_N"],
            bandwidth_B=p["bandwidth_B"],
            threshold_lambda=p["threshold_lambda"],
            noise_var=p["noise_var"],
            interference_var=p["interference_var"],
        ),
        "sensing",
    )
    frame = guard(
        lambda: FrameConfig(
            frame_T=p["frame_T"], sense_N=p["sense_N"], bandwidth_B=p["bandwidth_B"], snr_scaling=p["snr_scaling"]
        ),
        "frame_T",
    )
    if p["mode"] == "fixed":
        mode = guard(lambda: FixedRates(p["r1"], p["r2"]), "r1/r2")
    else:
        mode = guard(lambda: VariableRate(p["eps"]), "eps")
    dist = guard(lambda: FadingDist(mean_power=p["mean_power"], kind=p["fading"]), "mean_power")
    return guard(
        lambda: LinkPolicy(
            chain=chain,
            sensing=sensing,
            frame=frame,
            p1=db_to_linear(p["p1_db"]),
            p2=db_to_linear(p["p2_db"]),
            mode=mode,
            dist=dist,
            quad_order=p["quad_order"],
        ),
        "p1_db/p2_db",
    )


def build_budget(params: Mapping[str, Any]) -> InterferenceBudget | None:
    if params["i0_over_gain"] <= 0:
        return None
    try:
        return InterferenceBudget(params["i0_over_gain"], params["peak_p1"], params["peak_p2"])
    except ValueError as exc:
        raise ConfigError(str(exc), "i0_over_gain") from exc
