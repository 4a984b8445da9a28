"""Special functions and fading expectations.

Everything here is pure and vectorised where it matters. The Gaussian tail
functions are thin wrappers over :mod:`scipy.special`; the regularized lower
incomplete gamma function is computed directly (series / Lentz continued
fraction) because the energy detector needs both tails to full accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial.laguerre import laggauss
from scipy.linalg import eigh_tridiagonal
from scipy.special import ndtr, ndtri, roots_legendre

__all__ = [
    "FadingDist",
    "QuadratureRule",
    "regularized_gamma_p",
    "regularized_gamma_q",
    "gaussian_q",
    "gaussian_q_inv",
    "quadrature_rule",
    "fading_nodes",
    "expect_over_fading",
    "MIN_FADING_POWER",
    "DEFAULT_QUAD_ORDER",
]

DEFAULT_QUAD_ORDER = 96
# nodes are clamped to this to keep dispersion terms finite
MIN_FADING_POWER = 1e-12

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000


# ---------------------------------------------------------------------------
# incomplete gamma
# ---------------------------------------------------------------------------

def _gamma_series(a: float, x: float) -> float:
    # P(a, x) by the lower series; converges quickly for x < a + 1
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cf(a: float, x: float) -> float:
    # Q(a, x) by modified Lentz continued fraction; for x >= a + 1
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def _check_gamma_args(a: float, x: float) -> None:
    if not (a > 0) or math.isinf(a):
        raise ValueError(f"regularized gamma needs a > 0, got a={a!r}")
    if not (x >= 0):
        raise ValueError(f"regularized gamma needs x >= 0, got x={x!r}")


def regularized_gamma_p(a: float, x: float) -> float:
    """Regularized lower incomplete gamma function ``P(a, x)``.

    Args:
        a: Shape parameter, strictly positive.
        x: Upper integration limit, nonnegative (``inf`` allowed).

    Returns:
        ``gamma(a, x) / Gamma(a)`` in ``[0, 1]``.

    Raises:
        ValueError: if ``a <= 0`` or ``x < 0``.
    """
    a = float(a)
    x = float(x)
    _check_gamma_args(a, x)
    if x == 0.0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        return min(1.0, _gamma_series(a, x))
    return max(0.0, 1.0 - _gamma_cf(a, x))


def regularized_gamma_q(a: float, x: float) -> float:
    """Upper tail ``Q(a, x) = 1 - P(a, x)``, accurate when it is tiny."""
    a = float(a)
    x = float(x)
    _check_gamma_args(a, x)
    if x == 0.0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return max(0.0, 1.0 - _gamma_series(a, x))
    return min(1.0, _gamma_cf(a, x))


# ---------------------------------------------------------------------------
# Gaussian tail
# ---------------------------------------------------------------------------

def gaussian_q(x):
    """Gaussian tail probability ``Q(x) = P(Z > x)`` for standard normal Z.

    Works elementwise on arrays. ``ndtr(-x)`` keeps full relative accuracy
    in the upper tail, so no cancellation for large ``x``.
    """
    return ndtr(np.negative(x))


def gaussian_q_inv(p):
    """Inverse of :func:`gaussian_q`; ``p`` must lie strictly inside (0, 1)."""
    arr = np.asarray(p, dtype=float)
    if np.any(~((arr > 0.0) & (arr < 1.0))):
        raise ValueError(f"gaussian_q_inv needs 0 < p < 1, got {p!r}")
    out = -ndtri(arr)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# fading expectations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FadingDist:
    """Distribution of the fading power ``|h|^2``.

    ``kind="exponential"`` is Rayleigh amplitude fading. ``kind="point"``
    puts all mass on ``mean_power`` and is mostly useful for collapsing
    expectations in tests.
    """

    mean_power: float = 1.0
    kind: str = "exponential"

    def __post_init__(self):
        if not (self.mean_power > 0 and math.isfinite(self.mean_power)):
            raise ValueError(f"mean_power must be positive and finite, got {self.mean_power!r}")
        if self.kind not in ("exponential", "point"):
            raise ValueError(f"unknown fading kind {self.kind!r}")

    def quantile(self, p: float) -> float:
        if self.kind == "point":
            return self.mean_power
        return -self.mean_power * math.log1p(-p)

    def cdf(self, x: float) -> float:
        if self.kind == "point":
            return 1.0 if x >= self.mean_power else 0.0
        return -math.expm1(-max(x, 0.0) / self.mean_power)

    def sample(self, u):
        """Map uniforms in [0, 1) to fading powers by inversion."""
        u = np.asarray(u, dtype=float)
        if self.kind == "point":
            return np.full_like(u, self.mean_power)
        return -self.mean_power * np.log1p(-u)


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Laguerre rule for the unit-mean exponential density.

    Nodes are scaled by the fading mean power at evaluation time.
    """

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("quadrature order must be >= 1")
        if self.nodes.shape != self.weights.shape:
            raise ValueError("nodes and weights must have equal length")
        if np.any(self.weights <= 0) or np.any(self.nodes < 0):
            raise ValueError("weights must be positive and nodes nonnegative")


_RULE_CACHE: dict[int, QuadratureRule] = {}


def _laguerre_golub_welsch(order: int):
    # eigen-decomposition of the Jacobi matrix; tiny tail weights lose
    # relative accuracy but their contribution is far below rounding
    k = np.arange(order, dtype=float)
    x, vecs = eigh_tridiagonal(2.0 * k + 1.0, k[1:])
    return x, vecs[0] ** 2


def quadrature_rule(order: int = DEFAULT_QUAD_ORDER) -> QuadratureRule:
    """Gauss rule matched to ``exp(-x)`` on ``[0, inf)``.

    Uses numpy's ``laggauss`` where it is finite and falls back to the
    Golub-Welsch construction for high orders, where ``laggauss``
    overflows. Weights that underflow to zero are dropped, so
    ``len(rule.nodes)`` can be below ``order``.
    """
    order = int(order)
    if order < 1:
        raise ValueError("quadrature order must be >= 1")
    rule = _RULE_CACHE.get(order)
    if rule is None:
        with np.errstate(all="ignore"):
            x, w = laggauss(order)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(w))):
            x, w = _laguerre_golub_welsch(order)
        keep = w > 0
        x, w = x[keep], w[keep]
        # weights sum to Gamma(1) = 1 up to rounding; renormalise
        w = w / math.fsum(w)
        x.setflags(write=False)
        w.setflags(write=False)
        rule = QuadratureRule(nodes=x, weights=w, order=order)
        _RULE_CACHE[order] = rule
    return rule


def fading_nodes(dist: FadingDist, rule: QuadratureRule | None = None, breaks=None):
    """Fading-power nodes and weights for ``dist`` (clamped below).

    ``breaks`` lists fading powers where the integrand has a kink (for
    instance where a rate is clamped at zero). The half-line is then split
    there: Gauss-Legendre on each finite piece, weighted by the density,
    and a shifted Gauss-Laguerre rule on the tail. Kinks at piece
    boundaries do not spoil the convergence of a Gauss rule.
    """
    if dist.kind == "point":
        return np.array([max(dist.mean_power, MIN_FADING_POWER)]), np.array([1.0])
    rule = rule or quadrature_rule()
    scale = dist.mean_power
    cuts = sorted({float(b) / scale for b in (breaks or ()) if 0.0 < b < math.inf})
    if not cuts:
        nodes = np.maximum(rule.nodes * scale, MIN_FADING_POWER)
        return nodes, np.asarray(rule.weights)
    t, wt = roots_legendre(rule.order)
    xs, ws = [], []
    lo = 0.0
    for hi in cuts:
        half = 0.5 * (hi - lo)
        x = lo + half * (t + 1.0)
        xs.append(x)
        ws.append(half * wt * np.exp(-x))
        lo = hi
    xs.append(lo + rule.nodes)
    ws.append(math.exp(-lo) * rule.weights)
    nodes = np.maximum(np.concatenate(xs) * scale, MIN_FADING_POWER)
    weights = np.concatenate(ws)
    return nodes, weights / math.fsum(weights)


def expect_over_fading(
    f: Callable[[np.ndarray], np.ndarray],
    dist: FadingDist,
    rule: QuadratureRule | None = None,
    breaks=None,
) -> float:
    """``E[f(|h|^2)]`` by quadrature.

    ``f`` is called once on the whole node array. If it raises or returns
    non-finite values the offending node index is reported.
    """
    nodes, weights = fading_nodes(dist, rule, breaks)
    try:
        vals = np.broadcast_to(np.asarray(f(nodes), dtype=float), nodes.shape)
    except Exception as exc:
        for i, x in enumerate(nodes):
            try:
                f(np.array([x]))
            except Exception:
                raise ValueError(f"integrand failed at node {i} (|h|^2={x:.6g}): {exc}") from exc
        raise
    bad = ~np.isfinite(vals)
    if bad.any():
        i = int(np.argmax(bad))
        raise FloatingPointError(f"integrand not finite at node {i} (|h|^2={nodes[i]:.6g})")
    return float(weights @ vals)
