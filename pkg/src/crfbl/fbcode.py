"""Finite-blocklength rates and error probabilities for the four sensing scenarios.

Scenario numbering (true state, sensing decision):

    1  busy, sensed busy     SNR1 = P1 / (B (noise + interference))
    2  busy, sensed idle     SNR2 = P2 / (B (noise + interference))
    3  idle, sensed busy     SNR3 = P1 / (B noise)
    4  idle, sensed idle     SNR4 = P2 / (B noise)

All functions broadcast over numpy arrays of fading powers ``h2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .numerics import FadingDist, QuadratureRule, expect_over_fading, gaussian_q, gaussian_q_inv
from .sensing import ActivityChain, SensingPerf, priors

__all__ = [
    "FrameConfig",
    "ScenarioSnrs",
    "capacity",
    "dispersion_term",
    "fb_rate",
    "fb_error_prob",
    "rate_clamp_point",
    "scenario_error_fixed",
    "variable_rate",
    "mismatch_error_missdetect",
    "mismatch_error_falsealarm",
    "average_error_prob",
]

LOG2E = 1.0 / np.log(2.0)


@dataclass(frozen=True)
class FrameConfig:
    """Frame timing. ``snr_scaling="energy-constrained"`` boosts SNR by T/(T-N)."""

    frame_T: float = 0.1
    sense_N: float = 1e-3
    bandwidth_B: float = 1e4
    snr_scaling: str = "none"

    def __post_init__(self):
        if not (0 < self.sense_N < self.frame_T):
            raise ValueError(f"need 0 < N < T, got N={self.sense_N!r}, T={self.frame_T!r}")
        if not self.bandwidth_B > 0:
            raise ValueError("bandwidth must be positive")
        if self.blocklength < 2:
            raise ValueError(f"blocklength (T-N)B={self.blocklength} must be >= 2")
        if self.snr_scaling not in ("none", "energy-constrained"):
            raise ValueError(f"unknown snr_scaling {self.snr_scaling!r}")

    @property
    def blocklength(self) -> int:
        return int(round((self.frame_T - self.sense_N) * self.bandwidth_B))

    @property
    def symbols_per_frame(self) -> float:
        """``T*B``, the normaliser that turns bits/frame into bits/s/Hz."""
        return self.frame_T * self.bandwidth_B

    @property
    def data_fraction(self) -> float:
        return (self.frame_T - self.sense_N) / self.frame_T

    @property
    def snr_factor(self) -> float:
        if self.snr_scaling == "energy-constrained":
            return self.frame_T / (self.frame_T - self.sense_N)
        return 1.0

    @classmethod
    def from_blocklength(cls, n: int, sense_N: float = 1e-3, bandwidth_B: float = 1e4, **kw) -> "FrameConfig":
        """Frame whose data phase holds exactly ``n`` symbols."""
        return cls(frame_T=sense_N + n / bandwidth_B, sense_N=sense_N, bandwidth_B=bandwidth_B, **kw)


@dataclass(frozen=True)
class ScenarioSnrs:
    snr1: float
    snr2: float
    snr3: float
    snr4: float

    def __post_init__(self):
        if min(self.snr1, self.snr2, self.snr3, self.snr4) <= 0:
            raise ValueError("scenario SNRs must be positive")
        if self.snr1 > self.snr3 * (1 + 1e-12) or self.snr2 > self.snr4 * (1 + 1e-12):
            raise ValueError("interference cannot raise the SNR (need snr1 <= snr3, snr2 <= snr4)")

    @classmethod
    def from_powers(
        cls,
        p1: float,
        p2: float,
        noise_var: float,
        interference_var: float,
        frame: FrameConfig,
    ) -> "ScenarioSnrs":
        """Per-symbol energy ``P/B`` over the received noise(+interference) variance."""
        e1 = p1 / frame.bandwidth_B * frame.snr_factor
        e2 = p2 / frame.bandwidth_B * frame.snr_factor
        busy = noise_var + interference_var
        return cls(e1 / busy, e2 / busy, e1 / noise_var, e2 / noise_var)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.snr1, self.snr2, self.snr3, self.snr4)


def capacity(g):
    """``log2(1 + g)`` for received SNR ``g = snr * |h|^2``."""
    return np.log1p(g) * LOG2E


def dispersion_term(g, n: int):
    """``sqrt((1 - (1+g)^-2) / n) * log2(e)``, accurate for tiny ``g``."""
    v = -np.expm1(-2.0 * np.log1p(g))
    # sqrt before dividing so subnormal g does not underflow to zero
    return np.sqrt(v) / np.sqrt(n) * LOG2E


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def _check_eps(eps):
    if not (0.0 < eps < 1.0):
        raise ValueError(f"target error probability must lie in (0, 1), got {eps!r}")


def fb_rate(snr, h2, n: int, eps: float, clamp: bool = True):
    """Normal-approximation rate (bits/s/Hz) at block error ``eps``.

    Negative values (deep fades) are clamped to zero unless ``clamp=False``.
    """
    _check_eps(eps)
    g = np.multiply(snr, h2)
    r = capacity(g) - dispersion_term(g, n) * gaussian_q_inv(eps)
    if clamp:
        r = np.maximum(r, 0.0)
    return _scalar(r)


def rate_clamp_point(snr: float, n: int, eps: float) -> float:
    """Fading power below which :func:`fb_rate` is clamped to zero.

    Returns 0.0 when the rate never clamps (``eps >= 0.5``). The kink of
    the clamped rate sits here, so quadrature rules split at this point.
    """
    _check_eps(eps)
    qi = gaussian_q_inv(eps)
    if qi <= 0:
        return 0.0

    def gap(g):
        return np.log1p(g) - qi * np.sqrt(-np.expm1(-2.0 * np.log1p(g)) / n)

    # gap < 0 near g = 0 and gap > 0 once log1p(g) exceeds qi / sqrt(n)
    hi = 2.0 * np.expm1(qi / np.sqrt(n))
    lo = min(1e-300, hi)
    g_star = brentq(gap, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps)
    return float(g_star / snr)


def fb_error_prob(snr, h2, n: int, r):
    """Block error probability when sending at rate ``r`` on gain ``snr*h2``.

    At ``h2 == 0`` both capacity and dispersion vanish; the error is taken
    as 1 for ``r > 0`` and 0 for ``r == 0``.
    """
    g = np.multiply(snr, h2)
    g, r = np.broadcast_arrays(np.asarray(g, dtype=float), np.asarray(r, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        eps = gaussian_q((capacity(g) - r) / dispersion_term(g, n))
    dead = g <= 0.0
    if np.any(dead):
        eps = np.where(dead, np.where(r > 0.0, 1.0, 0.0), eps)
    return _scalar(eps)


def scenario_error_fixed(scenario: int, h2, snrs: ScenarioSnrs, frame: FrameConfig, r1: float, r2: float):
    """Error probability in ``scenario`` (1..4) under fixed rates."""
    if scenario not in (1, 2, 3, 4):
        raise ValueError(f"scenario must be 1..4, got {scenario!r}")
    snr = snrs.as_tuple()[scenario - 1]
    r = r1 if scenario in (1, 3) else r2
    return fb_error_prob(snr, h2, frame.blocklength, r)


def variable_rate(sensed_busy: bool, h2, snrs: ScenarioSnrs, frame: FrameConfig, eps: float):
    """Rate chosen with full CSI: planned for SNR1 when sensed busy, SNR4 otherwise."""
    snr = snrs.snr1 if sensed_busy else snrs.snr4
    return fb_rate(snr, h2, frame.blocklength, eps)


def _mismatch(g_true, g_planned, n, eps):
    # Q((log2((1+g_true)/(1+g_planned)) + V_planned Q^-1(eps)) / V_true)
    num = (np.log1p(g_true) - np.log1p(g_planned)) * LOG2E + dispersion_term(g_planned, n) * gaussian_q_inv(eps)
    return gaussian_q(num / dispersion_term(g_true, n))


def mismatch_error_missdetect(h2, snrs: ScenarioSnrs, frame: FrameConfig, eps: float):
    """Actual error when a busy channel is sensed idle (rate planned for SNR4, channel has SNR2)."""
    _check_eps(eps)
    h2 = np.asarray(h2, dtype=float)
    out = _mismatch(snrs.snr2 * h2, snrs.snr4 * h2, frame.blocklength, eps)
    return _scalar(out)


def mismatch_error_falsealarm(h2, snrs: ScenarioSnrs, frame: FrameConfig, eps: float):
    """Actual error when an idle channel is sensed busy (rate planned for SNR1, channel has SNR3)."""
    _check_eps(eps)
    h2 = np.asarray(h2, dtype=float)
    out = _mismatch(snrs.snr3 * h2, snrs.snr1 * h2, frame.blocklength, eps)
    return _scalar(out)


def average_error_prob(
    chain: ActivityChain,
    perf: SensingPerf,
    snrs: ScenarioSnrs,
    frame: FrameConfig,
    eps: float,
    dist: FadingDist,
    rule: QuadratureRule | None = None,
) -> float:
    """Long-run block error probability of variable-rate transmission."""
    pr_busy, pr_idle = priors(chain)
    e_miss = expect_over_fading(lambda h: mismatch_error_missdetect(h, snrs, frame, eps), dist, rule)
    e_fa = expect_over_fading(lambda h: mismatch_error_falsealarm(h, snrs, frame, eps), dist, rule)
    pd, pf = perf.p_detect, perf.p_false_alarm
    return (
        pr_busy * pd * eps
        + pr_busy * (1.0 - pd) * e_miss
        + pr_idle * pf * e_fa
        + pr_idle * (1.0 - pf) * eps
    )
