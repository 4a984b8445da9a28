"""Frame-level Monte Carlo of the secondary user's buffer.

Each frame advances the primary activity chain, draws a sensing decision,
draws a fading power and decides decoding success as a Bernoulli trial
with the frame's analytical error probability. Served bits leave a queue
fed by a constant arrival stream.

Randomness is counter-based: frame ``t`` of seed ``k`` always consumes
the four 64-bit words of Philox block ``(key=k, counter=t)``, so any
frame can be regenerated without replaying earlier ones and results do
not depend on the chunk size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .effrate import FixedRates, LinkPolicy, VariableRate
from .fbcode import (
    fb_error_prob,
    mismatch_error_falsealarm,
    mismatch_error_missdetect,
    variable_rate,
)
from .numerics import MIN_FADING_POWER
from .sensing import priors

__all__ = [
    "SimConfig",
    "SimResult",
    "DecayFit",
    "run_sim",
    "merge_results",
    "estimate_decay_rate",
    "frame_uniforms",
    "wilson_interval",
]

BURN_IN_FRACTION = 0.1
MIN_HORIZON = 10_000
# exceedance count below which a level is flagged and its interval widened
MIN_EXCEEDANCES = 10
WIDE_Z = 3.29
_CHUNK = 1 << 18


@dataclass(frozen=True)
class SimConfig:
    policy: LinkPolicy
    arrival_rate: float
    horizon_frames: int
    seed: int = 0
    q_levels: tuple[float, ...] = tuple(float(q) for q in range(0, 801, 50))
    trace_frames: int = 0
    confidence: float = 0.95

    def __post_init__(self):
        if self.horizon_frames < MIN_HORIZON:
            raise ValueError(f"horizon_frames must be >= {MIN_HORIZON}, got {self.horizon_frames}")
        if not (self.arrival_rate >= 0 and math.isfinite(self.arrival_rate)):
            raise ValueError("arrival_rate must be finite and nonnegative")
        q = np.asarray(self.q_levels, dtype=float)
        if q.ndim != 1 or q.size == 0:
            raise ValueError("q_levels must be a nonempty sequence")
        if np.any(q <= 0) and not (q[0] == 0 and np.all(q[1:] > 0)):
            raise ValueError("q_levels must be positive (a leading 0 is tolerated)")
        if np.any(np.diff(q) <= 0):
            raise ValueError("q_levels must be strictly increasing")
        if not (0 < self.confidence < 1):
            raise ValueError("confidence must lie in (0, 1)")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")


@dataclass(frozen=True)
class DecayFit:
    rate: float
    intercept: float
    window: tuple[float, float] | None
    r_squared: float
    points: int
    ok: bool
    message: str = ""


@dataclass
class SimResult:
    """Raw counts plus derived estimates; counts merge by addition."""

    q_levels: np.ndarray
    frames: int
    exceed_counts: np.ndarray
    state_counts: np.ndarray
    service_total: float
    arrival_rate: float
    confidence: float = 0.95
    trace: dict | None = None
    decay: DecayFit | None = field(default=None)

    def __post_init__(self):
        if self.decay is None:
            self.decay = estimate_decay_rate(self.q_levels, self.overflow_prob)

    @property
    def overflow_prob(self) -> np.ndarray:
        return self.exceed_counts / self.frames

    @property
    def low_count(self) -> np.ndarray:
        """Levels whose tail estimate rests on too few exceedances."""
        return self.exceed_counts < MIN_EXCEEDANCES

    @property
    def warning(self) -> bool:
        return bool(np.any(self.low_count & (self.exceed_counts < self.frames)))

    @property
    def overflow_ci(self) -> np.ndarray:
        """Wilson intervals, widened to z=3.29 at flagged levels.

        Frames are serially correlated, so these are nominal binomial
        intervals and understate the true uncertainty of a long run.
        """
        z = np.full(self.q_levels.shape, norm.isf((1 - self.confidence) / 2))
        z[self.low_count] = max(WIDE_Z, z[0])
        return np.column_stack(wilson_interval(self.exceed_counts, self.frames, z))

    @property
    def decay_rate_hat(self) -> float:
        return self.decay.rate

    @property
    def state_occupancy(self) -> np.ndarray:
        return self.state_counts / self.frames

    @property
    def mean_service(self) -> float:
        """Bits served per frame."""
        return self.service_total / self.frames


def wilson_interval(k, n, z):
    k = np.asarray(k, dtype=float)
    z = np.asarray(z, dtype=float)
    p = k / n
    denom = 1 + z**2 / n
    centre = (p + z**2 / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z**2 / (4 * n * n)) / denom
    return np.maximum(centre - half, 0.0), np.minimum(centre + half, 1.0)


def frame_uniforms(seed: int, start: int, count: int) -> np.ndarray:
    """Uniforms for frames ``start .. start+count-1``, shape ``(count, 4)``.

    Columns are (activity chain, sensing, fading, decoding).
    """
    bits = np.random.Philox(key=seed, counter=start).random_raw(4 * count)
    return ((bits >> np.uint64(11)).astype(np.float64) * 2.0**-53).reshape(count, 4)


def _advance_chain(u, s, q, prev_busy):
    """Busy flags for one chunk given the state before its first frame.

    Each frame maps the previous state through one of four maps: stay,
    flip, force busy, force idle. The state is the last forced value
    (or ``prev_busy``) XOR the parity of flips since then.
    """
    stay_busy = u >= s  # busy -> busy
    to_busy = u < q  # idle -> busy
    forced = stay_busy == to_busy
    flip = ~stay_busy & to_busy
    idx = np.arange(u.size)
    last = np.maximum.accumulate(np.where(forced, idx, -1))
    flips = np.cumsum(flip)
    base = np.where(last >= 0, stay_busy[np.maximum(last, 0)], prev_busy)
    flips_before = np.where(last >= 0, flips[np.maximum(last, 0)], 0)
    return base ^ ((flips - flips_before) % 2 == 1)


def _service(policy: LinkPolicy, busy, sensed_busy, h2, u_decode):
    frame, snrs = policy.frame, policy.snrs
    n = frame.blocklength
    scen = np.where(busy, np.where(sensed_busy, 1, 2), np.where(sensed_busy, 3, 4))
    mode = policy.mode
    if isinstance(mode, FixedRates):
        rate = np.where(sensed_busy, mode.r1, mode.r2)
        snr = np.choose(scen - 1, snrs.as_tuple())
        err = fb_error_prob(snr, h2, n, rate)
    elif isinstance(mode, VariableRate):
        eps = mode.eps
        rate = np.where(
            sensed_busy,
            variable_rate(True, h2, snrs, frame, eps),
            variable_rate(False, h2, snrs, frame, eps),
        )
        err = np.full(h2.shape, eps)
        m2, m3 = scen == 2, scen == 3
        err[m2] = mismatch_error_missdetect(h2[m2], snrs, frame, eps)
        err[m3] = mismatch_error_falsealarm(h2[m3], snrs, frame, eps)
    else:
        raise TypeError(f"unsupported mode {mode!r}")
    on = u_decode >= err
    service = np.where(on, n * rate, 0.0)
    state = 2 * (scen - 1) + np.where(on, 0, 1)
    return service, state


def run_sim(cfg: SimConfig) -> SimResult:
    """Simulate ``cfg.horizon_frames`` frames; tail statistics skip the first 10%."""
    policy = cfg.policy
    chain, perf = policy.chain, policy.perf
    pr_busy, _ = priors(chain)
    q_levels = np.asarray(cfg.q_levels, dtype=float)
    burn = int(BURN_IN_FRACTION * cfg.horizon_frames)
    a = float(cfg.arrival_rate)

    exceed = np.zeros(q_levels.size, dtype=np.int64)
    states = np.zeros(8, dtype=np.int64)
    service_total = 0.0
    queue = 0.0
    prev_busy = None
    trace_parts = []

    for start in range(0, cfg.horizon_frames, _CHUNK):
        m = min(_CHUNK, cfg.horizon_frames - start)
        u = frame_uniforms(cfg.seed, start, m)
        if prev_busy is None:
            # frame 0 starts from the stationary law
            first = u[0, 0] < pr_busy
            busy = _advance_chain(u[1:, 0], chain.s, chain.q, first)
            busy = np.concatenate([[first], busy])
        else:
            busy = _advance_chain(u[:, 0], chain.s, chain.q, prev_busy)
        prev_busy = bool(busy[-1])

        sensed_busy = u[:, 1] < np.where(busy, perf.p_detect, perf.p_false_alarm)
        h2 = np.maximum(policy.dist.sample(u[:, 2]), MIN_FADING_POWER)
        service, state = _service(policy, busy, sensed_busy, h2, u[:, 3])

        # Lindley recursion Q_t = max(0, Q_{t-1} + a - S_t) in closed form
        walk = np.cumsum(a - service)
        floor = np.minimum(np.minimum.accumulate(walk), -queue)
        q_path = walk - floor
        queue = float(q_path[-1])

        keep = slice(max(burn - start, 0), m)
        kept = q_path[keep]
        if kept.size:
            srt = np.sort(kept)
            exceed += kept.size - np.searchsorted(srt, q_levels, side="left")
            states += np.bincount(state[keep], minlength=8)
            service_total += float(service[keep].sum())

        if start < cfg.trace_frames:
            k = min(m, cfg.trace_frames - start)
            trace_parts.append(
                {
                    "frame": np.arange(start, start + k),
                    "busy": busy[:k].astype(int),
                    "sensed_busy": sensed_busy[:k].astype(int),
                    "h2": h2[:k],
                    "state": state[:k] + 1,
                    "service": service[:k],
                    "queue": q_path[:k],
                }
            )

    trace = None
    if trace_parts:
        trace = {key: np.concatenate([p[key] for p in trace_parts]) for key in trace_parts[0]}
    return SimResult(
        q_levels=q_levels,
        frames=cfg.horizon_frames - burn,
        exceed_counts=exceed,
        state_counts=states,
        service_total=service_total,
        arrival_rate=a,
        confidence=cfg.confidence,
        trace=trace,
    )


def merge_results(results) -> SimResult:
    """Pool independent replications sharing q-levels and arrival rate."""
    results = list(results)
    if not results:
        raise ValueError("nothing to merge")
    first = results[0]
    for r in results[1:]:
        if not np.array_equal(r.q_levels, first.q_levels) or r.arrival_rate != first.arrival_rate:
            raise ValueError("replications differ in q-levels or arrival rate")
    return SimResult(
        q_levels=first.q_levels,
        frames=sum(r.frames for r in results),
        exceed_counts=sum(r.exceed_counts for r in results),
        state_counts=sum(r.state_counts for r in results),
        service_total=math.fsum(r.service_total for r in results),
        arrival_rate=first.arrival_rate,
        confidence=first.confidence,
    )


def _linfit(x, y):
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def estimate_decay_rate(q_levels, probs, min_points: int = 3, min_r2: float = 0.98) -> DecayFit:
    """Slope of ``-log P(Q >= q)`` against ``q`` over the widest linear window.

    Only levels with a positive probability are used. Among contiguous
    windows of at least ``min_points`` levels, the longest whose fit has
    ``R^2 >= min_r2`` wins (ties go to the better fit). If none qualifies,
    the fit over all usable points is returned with ``ok=False``.
    """
    q = np.asarray(q_levels, dtype=float)
    p = np.asarray(probs, dtype=float)
    if q.shape != p.shape:
        raise ValueError("q_levels and probs must have equal length")
    use = p > 0
    x, y = q[use], -np.log(p[use])
    if x.size < min_points:
        return DecayFit(math.nan, math.nan, None, math.nan, int(x.size), False, "fewer than 3 nonzero tail points")
    if np.ptp(y) == 0:
        return DecayFit(0.0, float(y[0]), (float(x[0]), float(x[-1])), 1.0, int(x.size), False, "flat tail")

    best = None
    for length in range(x.size, min_points - 1, -1):
        for i in range(0, x.size - length + 1):
            slope, icpt, r2 = _linfit(x[i:i + length], y[i:i + length])
            if r2 >= min_r2 and (best is None or r2 > best[2]):
                best = (slope, icpt, r2, i, length)
        if best is not None:
            break
    if best is None:
        slope, icpt, r2 = _linfit(x, y)
        return DecayFit(slope, icpt, (float(x[0]), float(x[-1])), r2, int(x.size), False, "no window reaches R^2 threshold")
    slope, icpt, r2, i, length = best
    return DecayFit(slope, icpt, (float(x[i]), float(x[i + length - 1])), r2, length, True)
