"""Energy-detector statistics, primary-activity priors and interference checks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import regularized_gamma_q

__all__ = [
    "ActivityChain",
    "SensingConfig",
    "SensingPerf",
    "InterferenceBudget",
    "FeasibilityReport",
    "priors",
    "false_alarm_prob",
    "detection_prob",
    "sensing_perf",
    "sensed_state_probs",
    "simulate_test_statistic",
    "check_power_feasibility",
]


@dataclass(frozen=True)
class ActivityChain:
    """Two-state primary activity chain.

    ``s`` is the busy -> idle transition probability and ``q`` the
    idle -> busy one. Both strictly inside (0, 1) so the chain is ergodic.
    """

    s: float = 0.6
    q: float = 0.2

    def __post_init__(self):
        for name in ("s", "q"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise ValueError(f"{name} must lie in (0, 1), got {v!r}")


@dataclass(frozen=True)
class SensingConfig:
    """Energy detector setup.

    Attributes:
        sense_duration_N: sensing time in seconds.
        bandwidth_B: bandwidth in Hz; ``N*B`` complex samples are taken.
        threshold_lambda: decision threshold on the average sample energy.
        noise_var: background noise variance per sample.
        interference_var: primary signal variance per sample. Zero is
            accepted and makes both hypotheses identical.
    """

    sense_duration_N: float = 1e-3
    bandwidth_B: float = 1e4
    threshold_lambda: float = 0.1
    noise_var: float = 0.05
    interference_var: float = 0.12

    def __post_init__(self):
        if not (self.sense_duration_N > 0 and self.bandwidth_B > 0):
            raise ValueError("sensing duration and bandwidth must be positive")
        if self.sample_count < 1:
            raise ValueError(f"N*B={self.sense_duration_N * self.bandwidth_B:g} rounds below one sample")
        if not self.threshold_lambda > 0:
            raise ValueError(f"threshold_lambda must be positive, got {self.threshold_lambda!r}")
        if not self.noise_var > 0:
            raise ValueError(f"noise_var must be positive, got {self.noise_var!r}")
        if not self.interference_var >= 0:
            raise ValueError(f"interference_var must be nonnegative, got {self.interference_var!r}")

    @property
    def sample_count(self) -> int:
        return int(round(self.sense_duration_N * self.bandwidth_B))

    @property
    def sample_rounding(self) -> float:
        """How far ``N*B`` was from an integer before rounding."""
        return self.sample_count - self.sense_duration_N * self.bandwidth_B


@dataclass(frozen=True)
class SensingPerf:
    p_detect: float
    p_false_alarm: float

    def __post_init__(self):
        if not (0.0 <= self.p_false_alarm <= 1.0 and 0.0 <= self.p_detect <= 1.0):
            raise ValueError("sensing probabilities must lie in [0, 1]")
        if self.p_false_alarm > self.p_detect:
            raise ValueError(
                f"false alarm ({self.p_false_alarm!r}) exceeds detection ({self.p_detect!r})"
            )


@dataclass(frozen=True)
class InterferenceBudget:
    """Interference limit ``I0 / max_j E|g_sp,j|^2`` and optional peak caps."""

    i0_over_gain: float
    peak_p1: float = math.inf
    peak_p2: float = math.inf

    def __post_init__(self):
        if not (self.i0_over_gain > 0 and self.peak_p1 > 0 and self.peak_p2 > 0):
            raise ValueError("interference budget entries must be positive")


def priors(chain: ActivityChain) -> tuple[float, float]:
    """Stationary (busy, idle) probabilities of the activity chain."""
    total = chain.q + chain.s
    pr_busy = chain.q / total
    return pr_busy, 1.0 - pr_busy


def false_alarm_prob(cfg: SensingConfig) -> float:
    nb = cfg.sample_count
    return regularized_gamma_q(nb, nb * cfg.threshold_lambda / cfg.noise_var)


def detection_prob(cfg: SensingConfig) -> float:
    nb = cfg.sample_count
    return regularized_gamma_q(nb, nb * cfg.threshold_lambda / (cfg.noise_var + cfg.interference_var))


def sensing_perf(cfg: SensingConfig) -> SensingPerf:
    pf = false_alarm_prob(cfg)
    # with vanishing signal variance both tails agree to rounding; keep pd >= pf
    return SensingPerf(p_detect=max(detection_prob(cfg), pf), p_false_alarm=pf)


def sensed_state_probs(chain: ActivityChain, perf: SensingPerf) -> tuple[float, float]:
    """Probabilities that the channel is *sensed* busy and idle."""
    pr_busy, pr_idle = priors(chain)
    sensed_busy = pr_busy * perf.p_detect + pr_idle * perf.p_false_alarm
    return sensed_busy, 1.0 - sensed_busy


def simulate_test_statistic(cfg: SensingConfig, busy: bool, seed: int, trials: int | None = None):
    """Draw the detector statistic from complex Gaussian samples.

    With ``trials=None`` a single ``(statistic, decision)`` pair of Python
    scalars is returned. Otherwise both are arrays of length ``trials``.
    The primary signal is drawn as one aggregate CN(0, interference_var)
    sequence.
    """
    rng = np.random.default_rng(seed)
    nb = cfg.sample_count
    var = cfg.noise_var + (cfg.interference_var if busy else 0.0)
    count = 1 if trials is None else int(trials)
    out = np.empty(count)
    chunk = max(1, 2**21 // nb)
    for start in range(0, count, chunk):
        m = min(chunk, count - start)
        # |y|^2 with y ~ CN(0, var): real and imaginary parts each N(0, var/2)
        parts = rng.standard_normal((m, nb, 2)) * math.sqrt(var / 2.0)
        out[start:start + m] = np.sum(parts * parts, axis=(1, 2)) / nb
    decision = out > cfg.threshold_lambda
    if trials is None:
        return float(out[0]), bool(decision[0])
    return out, decision


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    mode: str
    interference: float
    limit: float
    binding: tuple[str, ...] = ()
    violated: tuple[str, ...] = ()
    max_p2: float = math.nan


_REL_TOL = 1e-9


def check_power_feasibility(
    p1: float,
    p2: float,
    perf: SensingPerf,
    budget: InterferenceBudget,
    mode: str = "avg-interference",
) -> FeasibilityReport:
    """Check transmit powers against the primary-user protection rules.

    ``mode="bound-p1"`` only caps the busy-sensed power. ``mode="avg-interference"``
    caps the detection-weighted average power and applies the peak limits.
    ``max_p2`` is the largest idle-sensed power that keeps ``p1`` feasible.
    """
    if not (p1 >= 0 and p2 >= 0):
        raise ValueError("powers must be nonnegative")
    limit = budget.i0_over_gain
    tol = _REL_TOL * max(1.0, limit)
    binding: list[str] = []
    violated: list[str] = []

    if mode == "bound-p1":
        level = p1
        if p1 > limit + tol:
            violated.append("interference")
        elif abs(p1 - limit) <= tol:
            binding.append("interference")
        max_p2 = math.inf if not violated else math.nan
    elif mode == "avg-interference":
        pd = perf.p_detect
        level = pd * p1 + (1.0 - pd) * p2
        if level > limit + tol:
            violated.append("interference")
        elif abs(level - limit) <= tol:
            binding.append("interference")
        for name, p, cap in (("peak_p1", p1, budget.peak_p1), ("peak_p2", p2, budget.peak_p2)):
            if p > cap + _REL_TOL * max(1.0, cap):
                violated.append(name)
            elif math.isfinite(cap) and abs(p - cap) <= _REL_TOL * max(1.0, cap):
                binding.append(name)
        if pd >= 1.0:
            max_p2 = budget.peak_p2 if pd * p1 <= limit + tol else math.nan
        else:
            room = (limit - pd * p1) / (1.0 - pd)
            max_p2 = min(room, budget.peak_p2) if room >= 0 else math.nan
        if p1 > budget.peak_p1 + _REL_TOL * max(1.0, budget.peak_p1):
            max_p2 = math.nan
    else:
        raise ValueError(f"unknown feasibility mode {mode!r}")

    return FeasibilityReport(
        feasible=not violated,
        mode=mode,
        interference=level,
        limit=limit,
        binding=tuple(binding),
        violated=tuple(violated),
        max_p2=max_p2,
    )
