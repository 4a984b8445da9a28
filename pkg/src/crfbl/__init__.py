"""Effective rate of cognitive radio links with finite blocklength codes."""

__version__ = "0.1.0"

from .effrate import (  # noqa: E402
    EffRateResult,
    FixedRates,
    LinkPolicy,
    VariableRate,
    effective_rate_fixed,
    effective_rate_variable,
    optimize_fixed,
    optimize_variable,
)
from .sensing import ActivityChain, SensingConfig, sensing_perf  # noqa: E402

__all__ = [
    "ActivityChain",
    "EffRateResult",
    "FixedRates",
    "LinkPolicy",
    "SensingConfig",
    "VariableRate",
    "effective_rate_fixed",
    "effective_rate_variable",
    "optimize_fixed",
    "optimize_variable",
    "sensing_perf",
]
