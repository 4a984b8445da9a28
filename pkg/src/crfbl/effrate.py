"""Effective rate (bits/s/Hz) under a QoS exponent, and its optimisation.

For ``theta > 0`` the effective rate is ``-log E[sp] / (theta T B)`` where
``sp`` is the spectral radius of the MGF-weighted eight-state transition
matrix at fading power ``|h|^2`` and the expectation runs over fading.
``theta == 0`` is never divided through; the buffer-free closed forms are
used instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Union

import numpy as np

from .fbcode import (
    FrameConfig,
    ScenarioSnrs,
    fb_error_prob,
    mismatch_error_falsealarm,
    mismatch_error_missdetect,
    rate_clamp_point,
    variable_rate,
)
from .markov8 import (
    TransitionRows,
    phi_fixed,
    phi_variable,
    spectral_radius_excess,
    spectral_radius_rank2,
    transition_rows_fixed,
    transition_rows_variable,
)
from .numerics import DEFAULT_QUAD_ORDER, FadingDist, QuadratureRule, fading_nodes, quadrature_rule
from .sensing import ActivityChain, SensingConfig, SensingPerf, priors, sensing_perf

__all__ = [
    "FixedRates",
    "VariableRate",
    "LinkPolicy",
    "EffRateResult",
    "effective_rate_fixed",
    "effective_rate_variable",
    "effective_rate_exact",
    "zero_theta_fixed",
    "zero_theta_variable",
    "zero_theta_weights",
    "rate_search_max",
    "optimize_fixed",
    "optimize_variable",
    "golden_section_max",
    "compass_search_max",
]


@dataclass(frozen=True)
class FixedRates:
    r1: float
    r2: float

    def __post_init__(self):
        if not (self.r1 >= 0 and self.r2 >= 0):
            raise ValueError("fixed rates must be nonnegative")


@dataclass(frozen=True)
class VariableRate:
    eps: float

    def __post_init__(self):
        if not (0.0 < self.eps < 1.0):
            raise ValueError(f"target error must lie in (0, 1), got {self.eps!r}")


Mode = Union[FixedRates, VariableRate]


@dataclass(frozen=True)
class LinkPolicy:
    """Everything needed to evaluate one operating point of the link.

    Powers ``p1`` (sensed busy) and ``p2`` (sensed idle) are linear.
    ``perf_override`` replaces the detector probabilities computed from
    ``sensing``, e.g. to study perfect sensing.
    """

    chain: ActivityChain = field(default_factory=ActivityChain)
    sensing: SensingConfig = field(default_factory=SensingConfig)
    frame: FrameConfig = field(default_factory=FrameConfig)
    p1: float = 1.0
    p2: float = 10.0
    mode: Mode = field(default_factory=lambda: VariableRate(0.001))
    dist: FadingDist = field(default_factory=FadingDist)
    quad_order: int = DEFAULT_QUAD_ORDER
    perf_override: SensingPerf | None = None

    def __post_init__(self):
        if not (self.p1 > 0 and self.p2 > 0):
            raise ValueError("transmit powers must be positive")
        if self.p1 > self.p2:
            raise ValueError(f"busy-sensed power p1={self.p1!r} exceeds idle-sensed power p2={self.p2!r}")
        if not math.isclose(self.frame.sense_N, self.sensing.sense_duration_N, rel_tol=1e-12):
            raise ValueError("frame and sensing disagree on the sensing duration")
        if not math.isclose(self.frame.bandwidth_B, self.sensing.bandwidth_B, rel_tol=1e-12):
            raise ValueError("frame and sensing disagree on the bandwidth")
        if self.quad_order < 1:
            raise ValueError("quad_order must be >= 1")

    @property
    def rule(self) -> QuadratureRule:
        return quadrature_rule(self.quad_order)

    @property
    def perf(self) -> SensingPerf:
        if self.perf_override is not None:
            return self.perf_override
        return sensing_perf(self.sensing)

    @property
    def snrs(self) -> ScenarioSnrs:
        return ScenarioSnrs.from_powers(
            self.p1, self.p2, self.sensing.noise_var, self.sensing.interference_var, self.frame
        )

    def nodes(self, breaks=None):
        return fading_nodes(self.dist, self.rule, breaks)

    def clamp_points(self, eps: float) -> tuple[float, float]:
        """Fading powers where the sensed-busy / sensed-idle variable rates clamp to zero."""
        n = self.frame.blocklength
        return rate_clamp_point(self.snrs.snr1, n, eps), rate_clamp_point(self.snrs.snr4, n, eps)

    def with_mode(self, mode: Mode) -> "LinkPolicy":
        return replace(self, mode=mode)


@dataclass
class EffRateResult:
    value: float
    theta: float
    argmax: tuple[float, float] | float | None = None
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _check_theta(theta: float) -> None:
    if not theta > 0:
        raise ValueError(f"theta must be > 0 here (got {theta!r}); use the zero-theta forms at 0")


def _rate_from_excess(mean_excess, mean_sp, theta, frame):
    # log1p keeps precision near sp = 1; fall back to log when sp is far below 1
    mean_excess = np.asarray(mean_excess, dtype=float)
    with np.errstate(divide="ignore"):
        log_sp = np.where(mean_excess > -0.5, np.log1p(mean_excess), np.log(mean_sp))
    out = -log_sp / (theta * frame.symbols_per_frame)
    return float(out) if out.ndim == 0 else out


def _fixed_rates(policy: LinkPolicy, r1, r2):
    if r1 is None or r2 is None:
        if not isinstance(policy.mode, FixedRates):
            raise ValueError("policy is not in fixed-rate mode; pass r1 and r2")
        r1 = policy.mode.r1 if r1 is None else r1
        r2 = policy.mode.r2 if r2 is None else r2
    return r1, r2


def _target_eps(policy: LinkPolicy, eps):
    if eps is None:
        if not isinstance(policy.mode, VariableRate):
            raise ValueError("policy is not in variable-rate mode; pass eps")
        eps = policy.mode.eps
    if not (0.0 < eps < 1.0):
        raise ValueError(f"target error must lie in (0, 1), got {eps!r}")
    return eps


def effective_rate_fixed(theta: float, policy: LinkPolicy, r1=None, r2=None):
    """Effective rate with fixed rates ``r1``/``r2`` (defaults from ``policy.mode``).

    ``r1`` and ``r2`` may be equal-shaped arrays; the result then has the
    same shape.
    """
    _check_theta(theta)
    r1, r2 = _fixed_rates(policy, r1, r2)
    r1 = np.asarray(r1, dtype=float)[..., None]
    r2 = np.asarray(r2, dtype=float)[..., None]
    h, w = policy.nodes()
    rows = transition_rows_fixed(h, policy.chain, policy.perf, policy.snrs, policy.frame, r1, r2)
    dphi = phi_fixed(theta, policy.frame, r1, r2, minus_one=True)
    excess = spectral_radius_excess(dphi, rows) @ w
    sp = spectral_radius_rank2(dphi + 1.0, rows) @ w
    return _rate_from_excess(excess, sp, theta, policy.frame)


def effective_rate_variable(theta: float, policy: LinkPolicy, eps=None, nested: str = "independent"):
    """Effective rate with variable rates at target error ``eps``.

    ``nested="independent"`` averages the ON-state MGFs over fading once
    and treats them as constants inside the outer fading expectation.
    ``nested="joint"`` uses the same fading draw for the MGF entries and
    the transition probabilities.
    """
    _check_theta(theta)
    eps = _target_eps(policy, eps)
    # the joint integrand inherits the rate kinks; the independent one is smooth
    h, w = policy.nodes(policy.clamp_points(eps) if nested == "joint" else None)
    frame, snrs = policy.frame, policy.snrs
    rows = transition_rows_variable(h, policy.chain, policy.perf, snrs, frame, eps)
    if nested == "independent":
        dphi = phi_variable(theta, frame, snrs, eps, policy.dist, policy.rule, minus_one=True)
    elif nested == "joint":
        r1 = variable_rate(True, h, snrs, frame, eps)
        r2 = variable_rate(False, h, snrs, frame, eps)
        dphi = phi_fixed(theta, frame, r1, r2, minus_one=True)
    else:
        raise ValueError(f"unknown nesting {nested!r}")
    excess = spectral_radius_excess(dphi, rows) @ w
    sp = spectral_radius_rank2(dphi + 1.0, rows) @ w
    return _rate_from_excess(excess, sp, theta, frame)


def effective_rate_exact(theta: float, policy: LinkPolicy) -> float:
    """Effective capacity of the frame process as actually simulated.

    Fading is redrawn every frame, so the exact log-MGF rate is the log
    spectral radius of the fading-averaged kernel ``E[R(h) diag(phi(h))]``
    rather than the fading average of per-fade spectral radii. Used to
    separate modelling error from simulation error in queue checks.
    """
    _check_theta(theta)
    frame, snrs = policy.frame, policy.snrs
    if isinstance(policy.mode, FixedRates):
        h, w = policy.nodes()
        r1, r2 = policy.mode.r1, policy.mode.r2
        rows = transition_rows_fixed(h, policy.chain, policy.perf, snrs, frame, r1, r2)
        dphi = np.broadcast_to(phi_fixed(theta, frame, r1, r2, minus_one=True), rows.row_busy.shape)
    else:
        eps = policy.mode.eps
        h, w = policy.nodes(policy.clamp_points(eps))
        rows = transition_rows_variable(h, policy.chain, policy.perf, snrs, frame, eps)
        dphi = phi_fixed(
            theta,
            frame,
            variable_rate(True, h, snrs, frame, eps),
            variable_rate(False, h, snrs, frame, eps),
            minus_one=True,
        )
    mean_busy = w @ rows.row_busy
    mean_idle = w @ rows.row_idle
    # both rows share the landing factors, so one effective phi serves both
    with np.errstate(divide="ignore", invalid="ignore"):
        d_eff = np.where(mean_busy > 0, (w @ (dphi * rows.row_busy)) / mean_busy, 0.0)
    avg_rows = TransitionRows(mean_busy, mean_idle)
    excess = spectral_radius_excess(d_eff, avg_rows)
    sp = spectral_radius_rank2(d_eff + 1.0, avg_rows)
    return _rate_from_excess(excess, sp, theta, frame)


def zero_theta_weights(chain: ActivityChain, weights: str = "closed-form") -> tuple[float, float]:
    """Coefficients multiplying the busy (scenarios 1, 2) and idle (3, 4) terms.

    ``"closed-form"`` gives the coefficients
    ``((1-s)(3q-s) + 4sq) / (2(s+q))`` and ``((1-s)(3s-q) + 4sq) / (2(s+q))``.
    ``"stationary"`` gives the activity-chain priors, which is the exact
    ``theta -> 0`` limit of the effective rate. The two differ unless the
    chain is special; at s=0.6, q=0.2 they are (0.3, 0.7) vs (0.25, 0.75).
    """
    s, q = chain.s, chain.q
    if weights == "closed-form":
        busy = ((1 - s) * (3 * q - s) + 4 * s * q) / (2 * (s + q))
        idle = ((1 - s) * (3 * s - q) + 4 * s * q) / (2 * (s + q))
        return busy, idle
    if weights == "stationary":
        return priors(chain)
    raise ValueError(f"unknown zero-theta weights {weights!r}")


def zero_theta_fixed(policy: LinkPolicy, r1=None, r2=None, weights: str = "closed-form"):
    """Buffer-free throughput with fixed rates (array-friendly in ``r1``/``r2``)."""
    r1, r2 = _fixed_rates(policy, r1, r2)
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    h, w = policy.nodes()
    snrs, n = policy.snrs, policy.frame.blocklength
    perf = policy.perf
    cb, ci = zero_theta_weights(policy.chain, weights)

    def mean_err(snr, r):
        return fb_error_prob(snr, h, n, r[..., None]) @ w

    out = policy.frame.data_fraction * (
        r1 * perf.p_detect * cb * (1 - mean_err(snrs.snr1, r1))
        + r2 * (1 - perf.p_detect) * cb * (1 - mean_err(snrs.snr2, r2))
        + r1 * perf.p_false_alarm * ci * (1 - mean_err(snrs.snr3, r1))
        + r2 * (1 - perf.p_false_alarm) * ci * (1 - mean_err(snrs.snr4, r2))
    )
    return float(out) if np.ndim(out) == 0 else out


def zero_theta_variable(policy: LinkPolicy, eps=None, weights: str = "closed-form") -> float:
    """Buffer-free throughput with variable rates at target error ``eps``."""
    eps = _target_eps(policy, eps)
    snrs, frame, perf = policy.snrs, policy.frame, policy.perf
    cb, ci = zero_theta_weights(policy.chain, weights)
    k1, k4 = policy.clamp_points(eps)
    h1, w1 = policy.nodes([k1])
    h4, w4 = policy.nodes([k4])
    h, w = policy.nodes()
    mean_r1 = w1 @ variable_rate(True, h1, snrs, frame, eps)
    mean_r2 = w4 @ variable_rate(False, h4, snrs, frame, eps)
    mean_miss = w @ mismatch_error_missdetect(h, snrs, frame, eps)
    mean_fa = w @ mismatch_error_falsealarm(h, snrs, frame, eps)
    pd, pf = perf.p_detect, perf.p_false_alarm
    return frame.data_fraction * (
        mean_r1 * pd * cb * (1 - eps)
        + mean_r2 * (1 - pd) * cb * (1 - mean_miss)
        + mean_r1 * pf * ci * (1 - mean_fa)
        + mean_r2 * (1 - pf) * ci * (1 - eps)
    )


# ---------------------------------------------------------------------------
# derivative-free maximisers
# ---------------------------------------------------------------------------

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section_max(f: Callable[[float], float], a: float, b: float, xtol: float = 1e-9, max_iter: int = 200):
    """Maximise a unimodal ``f`` on ``[a, b]``.

    Returns ``(x, f(x), iterations, converged)``. The endpoints are also
    compared at the end so a monotone ``f`` returns its boundary maximum.
    """
    fa, fb = f(a), f(b)
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    it = 0
    while abs(b - a) > xtol and it < max_iter:
        if fc >= fd:
            b, fb, d, fd = d, fd, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, fa, c, fc = c, fc, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
        it += 1
    best = max(((fa, a), (fb, b), (fc, c), (fd, d)), key=lambda t: t[0])
    return best[1], best[0], it, abs(b - a) <= xtol


_COMPASS = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])


def compass_search_max(f, x0, step: float, lo, hi, xtol: float = 1e-9, max_iter: int = 2000):
    """Maximise ``f`` over a box by compass (coordinate pattern) search.

    ``f`` maps an ``(m, 2)`` array of points to ``m`` values. The step is
    halved whenever no compass neighbour improves.
    """
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    fx = float(f(x[None, :])[0])
    it = 0
    while step > xtol and it < max_iter:
        cand = np.clip(x + step * _COMPASS, lo, hi)
        vals = f(cand)
        k = int(np.argmax(vals))
        if vals[k] > fx:
            x, fx = cand[k], float(vals[k])
        else:
            step *= 0.5
        it += 1
    return x, fx, it, step <= xtol


def rate_search_max(policy: LinkPolicy) -> float:
    """Upper end of the fixed-rate search box: capacity at the 99th-percentile fade."""
    return float(np.log2(1.0 + policy.snrs.snr4 * policy.dist.quantile(0.99)))


def optimize_fixed(
    theta: float,
    policy: LinkPolicy,
    grid_points: int = 41,
    xtol: float = 1e-10,
    weights: str = "closed-form",
) -> EffRateResult:
    """Maximise the fixed-rate effective rate over ``(r1, r2)``.

    A coarse grid over ``[0, r_max]^2`` locates the best cell; compass search
    is then started from the best grid point and the four surrounding grid
    corners, and the best end point wins. ``theta == 0`` optimises the
    buffer-free closed form with the given ``weights``.
    """
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    r_max = rate_search_max(policy)

    if theta == 0:
        def objective(x):
            return np.asarray(zero_theta_fixed(policy, x[:, 0], x[:, 1], weights=weights))
    else:
        def objective(x):
            return np.asarray(effective_rate_fixed(theta, policy, x[:, 0], x[:, 1]))

    grid = np.linspace(0.0, r_max, grid_points)
    g1, g2 = np.meshgrid(grid, grid, indexing="ij")
    vals = objective(np.column_stack([g1.ravel(), g2.ravel()])).reshape(g1.shape)
    i, j = np.unravel_index(int(np.argmax(vals)), vals.shape)
    step = grid[1] - grid[0]
    last = grid_points - 1
    starts = [(i, j)] + [
        (min(max(i + di, 0), last), min(max(j + dj, 0), last)) for di in (-1, 1) for dj in (-1, 1)
    ]
    finals = []
    iterations = 0
    converged = True
    for si, sj in starts:
        x, fx, it, ok = compass_search_max(objective, (grid[si], grid[sj]), step, 0.0, r_max, xtol=xtol * max(r_max, 1.0))
        finals.append((fx, x))
        iterations += it
        converged &= ok
    values = np.array([v for v, _ in finals])
    best_val, best_x = max(finals, key=lambda t: t[0])
    diagnostics = {
        "r_max": r_max,
        "grid_points": grid_points,
        "grid_best": float(vals[i, j]),
        "start_values": values.tolist(),
        "start_spread": float(values.max() - values.min()),
        "iterations": iterations,
        "converged": bool(converged),
        "quad_order": policy.quad_order,
        "clamp_fraction": 0.0,
    }
    if theta == 0:
        diagnostics["zero_theta_weights"] = weights
    return EffRateResult(
        value=max(float(best_val), 0.0),
        theta=theta,
        argmax=(float(best_x[0]), float(best_x[1])),
        diagnostics=diagnostics,
    )


def _clamp_fraction(policy: LinkPolicy, eps: float) -> float:
    # share of fades (averaged over the two planned SNRs) with a zero rate
    k1, k4 = policy.clamp_points(eps)
    return 0.5 * (policy.dist.cdf(k1) + policy.dist.cdf(k4))


def optimize_variable(
    theta: float,
    policy: LinkPolicy,
    grid_points: int = 41,
    log_eps_range: tuple[float, float] = (-8.0, math.log10(0.999)),
    xtol: float = 1e-7,
    weights: str = "closed-form",
    nested: str = "independent",
) -> EffRateResult:
    """Maximise the variable-rate effective rate over the target error.

    A log-spaced grid brackets the best ``eps``; golden-section search on
    ``log10(eps)`` then refines inside the two neighbouring grid cells.
    """
    if theta < 0:
        raise ValueError("theta must be nonnegative")

    if theta == 0:
        def objective(t):
            return zero_theta_variable(policy, 10.0 ** t, weights=weights)
    else:
        def objective(t):
            return effective_rate_variable(theta, policy, 10.0 ** t, nested=nested)

    ts = np.linspace(log_eps_range[0], log_eps_range[1], grid_points)
    vals = np.array([objective(t) for t in ts])
    k = int(np.argmax(vals))
    lo, hi = ts[max(k - 1, 0)], ts[min(k + 1, grid_points - 1)]
    t_best, v_best, it, ok = golden_section_max(objective, lo, hi, xtol=xtol)
    if vals[k] > v_best:
        t_best, v_best = ts[k], vals[k]
    eps = 10.0 ** t_best
    diagnostics = {
        "grid_points": grid_points,
        "grid_best": float(vals[k]),
        "bracket": (float(10.0 ** lo), float(10.0 ** hi)),
        "iterations": it,
        "converged": bool(ok),
        "quad_order": policy.quad_order,
        "clamp_fraction": _clamp_fraction(policy, eps),
        "interior": 0 < k < grid_points - 1,
    }
    if theta == 0:
        diagnostics["zero_theta_weights"] = weights
    return EffRateResult(value=max(float(v_best), 0.0), theta=theta, argmax=float(eps), diagnostics=diagnostics)
