"""Eight-state channel model: transition rows, MGF diagonal, spectral radius.

State ordering is scenario-major with ON before OFF::

    index   1   2    3   4    5   6    7   8
    scen    1   1    2   2    3   3    4   4
    decode  ON  OFF  ON  OFF  ON  OFF  ON  OFF

States 1-4 have a busy primary channel and 5-8 an idle one. Every row of
the 8x8 transition matrix equals either ``row_busy`` (from states 1-4) or
``row_idle`` (from states 5-8), so the matrix has rank two and its
spectral radius has a closed form. The dense matrix is only built for
tests and diagnostics.

Arrays carry the state axis last, so ``row_busy`` may have shape ``(8,)``
or ``(..., 8)`` when evaluated over a grid of fading powers.
"""

from __future__ import annotations

from dataclasses import dataclass

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
from .numerics import FadingDist, QuadratureRule, expect_over_fading
from .sensing import ActivityChain, SensingPerf

__all__ = [
    "ChannelState",
    "TransitionRows",
    "ON_STATES",
    "OFF_STATES",
    "transition_rows",
    "transition_rows_fixed",
    "transition_rows_variable",
    "phi_fixed",
    "phi_variable",
    "spectral_radius_rank2",
    "spectral_radius_excess",
    "stationary_distribution",
]

# zero-based positions
ON_STATES = np.array([0, 2, 4, 6])
OFF_STATES = np.array([1, 3, 5, 7])


@dataclass(frozen=True)
class ChannelState:
    scenario: int
    on: bool

    def __post_init__(self):
        if self.scenario not in (1, 2, 3, 4):
            raise ValueError(f"scenario must be 1..4, got {self.scenario!r}")

    @property
    def index(self) -> int:
        """One-based state index."""
        return 2 * (self.scenario - 1) + (0 if self.on else 1) + 1

    @classmethod
    def from_index(cls, index: int) -> "ChannelState":
        if not 1 <= index <= 8:
            raise ValueError(f"state index must be 1..8, got {index!r}")
        return cls(scenario=(index - 1) // 2 + 1, on=(index - 1) % 2 == 0)

    @property
    def busy(self) -> bool:
        return self.scenario in (1, 2)


@dataclass(frozen=True)
class TransitionRows:
    row_busy: np.ndarray
    row_idle: np.ndarray

    def __post_init__(self):
        if self.row_busy.shape != self.row_idle.shape or self.row_busy.shape[-1] != 8:
            raise ValueError("transition rows must share a shape ending in 8")

    def validate(self, tol: float = 1e-12) -> None:
        """Raise ``ValueError`` unless both rows are probability vectors."""
        for name, row in (("row_busy", self.row_busy), ("row_idle", self.row_idle)):
            if np.any(row < -tol) or np.any(row > 1 + tol):
                raise ValueError(f"{name} has entries outside [0, 1]")
            dev = np.max(np.abs(row.sum(axis=-1) - 1.0))
            if dev > tol:
                raise ValueError(f"{name} sums differ from 1 by {dev:.3g}")

    def matrix(self) -> np.ndarray:
        """Dense 8x8 transition matrix (rows 1-4 busy, 5-8 idle)."""
        return np.concatenate(
            [np.repeat(self.row_busy[..., None, :], 4, axis=-2), np.repeat(self.row_idle[..., None, :], 4, axis=-2)],
            axis=-2,
        )


def transition_rows(chain: ActivityChain, perf: SensingPerf, errors) -> TransitionRows:
    """Assemble the two distinct rows from per-scenario error probabilities.

    ``errors`` is a sequence ``(e1, e2, e3, e4)``; entries may be arrays
    and are broadcast together.
    """
    e1, e2, e3, e4 = np.broadcast_arrays(*[np.asarray(e, dtype=float) for e in errors])
    pd, pf = perf.p_detect, perf.p_false_alarm
    # landing distribution over states given the new frame is busy / idle
    land_busy = np.stack([pd * (1 - e1), pd * e1, (1 - pd) * (1 - e2), (1 - pd) * e2], axis=-1)
    land_idle = np.stack([pf * (1 - e3), pf * e3, (1 - pf) * (1 - e4), (1 - pf) * e4], axis=-1)
    s, q = chain.s, chain.q
    row_busy = np.concatenate([(1 - s) * land_busy, s * land_idle], axis=-1)
    row_idle = np.concatenate([q * land_busy, (1 - q) * land_idle], axis=-1)
    return TransitionRows(row_busy, row_idle)


def transition_rows_fixed(h2, chain, perf, snrs: ScenarioSnrs, frame: FrameConfig, r1, r2) -> TransitionRows:
    """Rows under fixed rates ``r1`` (sensed busy) and ``r2`` (sensed idle).

    ``r1``/``r2`` may be arrays; they broadcast against ``h2``.
    """
    n = frame.blocklength
    h2 = np.asarray(h2, dtype=float)
    errors = (
        fb_error_prob(snrs.snr1, h2, n, r1),
        fb_error_prob(snrs.snr2, h2, n, r2),
        fb_error_prob(snrs.snr3, h2, n, r1),
        fb_error_prob(snrs.snr4, h2, n, r2),
    )
    return transition_rows(chain, perf, errors)


def transition_rows_variable(h2, chain, perf, snrs: ScenarioSnrs, frame: FrameConfig, eps: float) -> TransitionRows:
    """Rows under variable-rate transmission at target error ``eps``.

    Columns 1, 2, 7, 8 do not depend on ``h2``; the mismatched scenarios
    2 and 3 carry the fading-dependent errors.
    """
    h2 = np.asarray(h2, dtype=float)
    errors = (
        eps,
        mismatch_error_missdetect(h2, snrs, frame, eps),
        mismatch_error_falsealarm(h2, snrs, frame, eps),
        eps,
    )
    return transition_rows(chain, perf, errors)


def _phi_from_on(on1, on2) -> np.ndarray:
    on1, on2 = np.broadcast_arrays(np.asarray(on1, dtype=float), np.asarray(on2, dtype=float))
    one = np.ones_like(on1)
    return np.stack([on1, one, on2, one, on1, one, on2, one], axis=-1)


def phi_fixed(theta: float, frame: FrameConfig, r1, r2, minus_one: bool = False) -> np.ndarray:
    """Diagonal of the service MGF at ``-theta`` for fixed rates.

    With ``minus_one=True`` returns ``phi - 1`` computed via ``expm1``,
    which keeps precision as ``theta -> 0``.
    """
    if theta < 0:
        raise ValueError(f"theta must be nonnegative, got {theta!r}")
    bits = frame.blocklength
    f = np.expm1 if minus_one else np.exp
    on1 = f(-theta * bits * np.asarray(r1, dtype=float))
    on2 = f(-theta * bits * np.asarray(r2, dtype=float))
    out = _phi_from_on(on1, on2)
    if minus_one:
        out[..., OFF_STATES] = 0.0
    return out


def phi_variable(
    theta: float,
    frame: FrameConfig,
    snrs: ScenarioSnrs,
    eps: float,
    dist: FadingDist,
    rule: QuadratureRule | None = None,
    minus_one: bool = False,
) -> np.ndarray:
    """MGF diagonal for variable rates: ON entries averaged over fading.

    The rule is split at the fading powers where each rate clamps to zero.
    """
    if theta < 0:
        raise ValueError(f"theta must be nonnegative, got {theta!r}")
    bits = frame.blocklength
    f = np.expm1 if minus_one else np.exp
    k1 = rate_clamp_point(snrs.snr1, bits, eps)
    k4 = rate_clamp_point(snrs.snr4, bits, eps)
    on1 = expect_over_fading(lambda h: f(-theta * bits * variable_rate(True, h, snrs, frame, eps)), dist, rule, [k1])
    on2 = expect_over_fading(lambda h: f(-theta * bits * variable_rate(False, h, snrs, frame, eps)), dist, rule, [k4])
    out = _phi_from_on(on1, on2)
    if minus_one:
        out[..., OFF_STATES] = 0.0
    return out


def _block_sums(phi, rows: TransitionRows):
    pb = phi * rows.row_busy
    pi = phi * rows.row_idle
    x1 = pb[..., :4].sum(axis=-1)  # busy -> busy block
    y2 = pb[..., 4:].sum(axis=-1)  # busy -> idle block
    y1 = pi[..., :4].sum(axis=-1)  # idle -> busy block
    x2 = pi[..., 4:].sum(axis=-1)  # idle -> idle block
    return x1, x2, y1, y2


def spectral_radius_rank2(phi, rows: TransitionRows):
    """Largest eigenvalue of ``diag(phi) @ R`` from its 2x2 reduction.

    The square root is formed with ``hypot`` so it does not cancel when the
    two diagonal block sums are nearly equal.
    """
    x1, x2, y1, y2 = _block_sums(np.asarray(phi, dtype=float), rows)
    root = np.hypot(x1 - x2, 2.0 * np.sqrt(y1 * y2))
    out = 0.5 * (x1 + x2) + 0.5 * root
    return float(out) if np.ndim(out) == 0 else out


def spectral_radius_excess(phi_minus_one, rows: TransitionRows):
    """``sp(diag(phi) R) - 1`` without cancellation when ``phi`` is near one.

    Takes ``phi - 1`` (see ``phi_fixed(..., minus_one=True)``) and assumes
    the rows are stochastic. ``mu = sp - 1`` is the larger root of
    ``mu^2 + b mu + c = 0`` whose coefficients are expanded in ``phi - 1``
    so that the zero-order terms drop out exactly.
    """
    d = np.asarray(phi_minus_one, dtype=float)
    rb, ri = rows.row_busy, rows.row_idle
    c1 = ri[..., :4].sum(axis=-1)  # mass idle -> busy block
    c2 = rb[..., 4:].sum(axis=-1)  # mass busy -> idle block
    d1 = (d * rb)[..., :4].sum(axis=-1)
    e2 = (d * rb)[..., 4:].sum(axis=-1)
    e1 = (d * ri)[..., :4].sum(axis=-1)
    d2 = (d * ri)[..., 4:].sum(axis=-1)
    b = c1 + c2 - d1 - d2
    c = -c1 * (d1 + e2) - c2 * (d2 + e1) + d1 * d2 - e1 * e2
    disc = np.sqrt(np.maximum(b * b - 4.0 * c, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        stable = -2.0 * c / (b + disc)
    mu = np.where(b > 0, stable, 0.5 * (-b + disc))
    return float(mu) if np.ndim(mu) == 0 else mu


def stationary_distribution(rows: TransitionRows) -> np.ndarray:
    """Stationary law of the eight-state chain.

    Because each row is one of two vectors, ``pi = w_busy row_busy +
    w_idle row_idle`` with ``(w_busy, w_idle)`` stationary for the 2x2
    block chain.
    """
    to_idle_from_busy = rows.row_busy[..., 4:].sum(axis=-1)
    to_busy_from_idle = rows.row_idle[..., :4].sum(axis=-1)
    w_busy = to_busy_from_idle / (to_busy_from_idle + to_idle_from_busy)
    w_busy = np.asarray(w_busy)[..., None]
    return w_busy * rows.row_busy + (1.0 - w_busy) * rows.row_idle
