import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from crfbl.numerics import (
    MIN_FADING_POWER,
    FadingDist,
    expect_over_fading,
    fading_nodes,
    gaussian_q,
    gaussian_q_inv,
    quadrature_rule,
    regularized_gamma_p,
    regularized_gamma_q,
)


def test_gamma_p_matches_frozen_value(oracle):
    assert regularized_gamma_p(10, 20) == pytest.approx(oracle["reg_gamma_p_10_20"], rel=1e-14)


def test_gamma_tails_near_endpoints():
    assert regularized_gamma_p(1, 0) == 0.0
    assert regularized_gamma_q(1, 0) == 1.0
    assert regularized_gamma_p(3.5, math.inf) == 1.0
    # a = 1 is the exponential cdf
    assert regularized_gamma_p(1, 0.7) == pytest.approx(-math.expm1(-0.7), rel=1e-15)


@pytest.mark.parametrize("a,x", [(0.5, 1e-8), (10, 2), (10, 9.9), (10, 11.1), (10, 60), (200, 150), (200, 260), (1e4, 1.01e4)])
def test_gamma_against_mpmath(a, x):
    # the prefactor exp(a log x - x - lgamma(a)) costs about a*1e-16 relative
    rel = max(1e-12, 1e-15 * a)
    mp.mp.dps = 30
    p = float(mp.gammainc(a, 0, x, regularized=True))
    q = float(mp.gammainc(a, x, mp.inf, regularized=True))
    assert regularized_gamma_p(a, x) == pytest.approx(p, rel=rel, abs=1e-300)
    # the upper tail keeps relative accuracy even when it is tiny
    assert regularized_gamma_q(a, x) == pytest.approx(q, rel=max(1e-10, 10 * rel), abs=1e-300)


@pytest.mark.parametrize("a,x", [(0, 1), (-1, 1), (1, -0.1), (math.inf, 1), (math.nan, 1)])
def test_gamma_domain_errors(a, x):
    with pytest.raises(ValueError):
        regularized_gamma_p(a, x)
    with pytest.raises(ValueError):
        regularized_gamma_q(a, x)


@settings(max_examples=300, deadline=None)
@given(st.floats(0.05, 500), st.floats(0, 2000))
def test_gamma_complement_and_reference(a, x):
    p, q = regularized_gamma_p(a, x), regularized_gamma_q(a, x)
    assert 0.0 <= p <= 1.0 and 0.0 <= q <= 1.0
    assert p + q == pytest.approx(1.0, abs=1e-13)
    assert p == pytest.approx(special.gammainc(a, x), abs=1e-12)


def test_gaussian_q_values(oracle):
    assert gaussian_q(3.0902) == pytest.approx(oracle["qfunc_3_0902"], rel=1e-13)
    assert gaussian_q(0.0) == 0.5
    assert gaussian_q_inv(1e-3) == pytest.approx(oracle["qinv_0_001"], rel=1e-14)
    # far tail keeps relative accuracy
    assert gaussian_q(30.0) == pytest.approx(float(mp.erfc(30 / mp.sqrt(2)) / 2), rel=1e-12)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, math.nan])
def test_gaussian_q_inv_domain(p):
    with pytest.raises(ValueError):
        gaussian_q_inv(p)


@settings(max_examples=300, deadline=None)
@given(st.floats(1e-300, 1 - 1e-16))
def test_gaussian_q_round_trip(p):
    assert gaussian_q(gaussian_q_inv(p)) == pytest.approx(p, rel=1e-9)


def test_quadrature_rule_moments():
    rule = quadrature_rule(96)
    assert math.fsum(rule.weights) == pytest.approx(1.0, abs=1e-15)
    for k in range(6):
        assert rule.weights @ rule.nodes**k == pytest.approx(math.factorial(k), rel=1e-10)


@pytest.mark.parametrize("order", [200, 400])
def test_quadrature_rule_high_order_stays_finite(order):
    rule = quadrature_rule(order)
    assert np.all(np.isfinite(rule.nodes)) and np.all(rule.weights > 0)
    assert rule.weights @ rule.nodes == pytest.approx(1.0, rel=1e-12)
    assert rule.weights @ rule.nodes**2 == pytest.approx(2.0, rel=1e-12)


def test_quadrature_rule_is_cached_and_read_only():
    rule = quadrature_rule(17)
    assert quadrature_rule(17) is rule
    with pytest.raises(ValueError):
        rule.nodes[0] = 1.0


def _smooth_rate(h):
    return np.log2(1 + 0.02 * h)


def _error_step(h):
    # decoding-error shape: drops from 1 to 0 over a narrow band around h ~ 1
    return special.ndtr(-(np.log2(1 + 0.02 * h) - 0.03) / 0.01)


def _adaptive_reference(f, mean_power):
    dens = lambda h: f(h) * math.exp(-h / mean_power) / mean_power  # noqa: E731
    head, _ = integrate.quad(dens, 0, 60, points=[0.5, 1.0, 1.04, 2.0, 5.0], epsabs=1e-15, limit=500)
    tail, _ = integrate.quad(dens, 60, math.inf, epsabs=1e-15)
    return head + tail


@pytest.mark.parametrize("f", [_smooth_rate, lambda h: np.exp(-0.5 * h)])
@pytest.mark.parametrize("mean_power", [0.5, 1.0, 3.0])
def test_expectation_against_adaptive_quad(f, mean_power):
    ref = _adaptive_reference(f, mean_power)
    assert expect_over_fading(f, FadingDist(mean_power=mean_power)) == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("mean_power,order,rel", [(1.0, 96, 1e-6), (3.0, 96, 1e-3), (3.0, 400, 1e-8)])
def test_expectation_of_steep_integrand_converges_with_order(mean_power, order, rel):
    ref = _adaptive_reference(_error_step, mean_power)
    got = expect_over_fading(_error_step, FadingDist(mean_power=mean_power), quadrature_rule(order))
    assert got == pytest.approx(ref, rel=rel)


def test_breakpoints_fix_kinked_integrands():
    # clamped linear function: kink at h = 2
    f = lambda h: np.maximum(h - 2.0, 0.0)  # noqa: E731
    exact = math.exp(-2.0)
    dist = FadingDist()
    plain = expect_over_fading(f, dist, quadrature_rule(32))
    split = expect_over_fading(f, dist, quadrature_rule(32), breaks=[2.0])
    assert abs(split - exact) < 1e-13
    assert abs(plain - exact) > 100 * abs(split - exact)


def test_breaks_weights_integrate_density():
    h, w = fading_nodes(FadingDist(2.0), quadrature_rule(40), breaks=[0.3, 5.0, math.inf, -1.0])
    assert math.fsum(w) == pytest.approx(1.0, abs=1e-14)
    assert w @ h == pytest.approx(2.0, rel=1e-13)


def test_point_mass_collapses_expectation():
    dist = FadingDist(mean_power=1.7, kind="point")
    h, w = fading_nodes(dist)
    assert h.tolist() == [1.7] and w.tolist() == [1.0]
    assert expect_over_fading(lambda x: x**2, dist) == pytest.approx(1.7**2)


def test_nodes_are_clamped_away_from_zero():
    h, _ = fading_nodes(FadingDist(mean_power=1e-20))
    assert h.min() >= MIN_FADING_POWER


def test_expectation_reports_failing_node():
    def bad(h):
        out = np.ones_like(h)
        out[h > 50] = np.nan
        return out

    with pytest.raises(FloatingPointError, match="node"):
        expect_over_fading(bad, FadingDist())

    def raises(h):
        if np.any(h > 100):
            raise ArithmeticError("boom")
        return h

    with pytest.raises(ValueError, match="node"):
        expect_over_fading(raises, FadingDist())


def test_fading_dist_validation_and_sampling():
    with pytest.raises(ValueError):
        FadingDist(mean_power=0)
    with pytest.raises(ValueError):
        FadingDist(kind="nakagami")
    d = FadingDist(2.0)
    assert d.quantile(0.99) == pytest.approx(2.0 * math.log(100))
    assert d.cdf(d.quantile(0.3)) == pytest.approx(0.3)
    u = np.random.default_rng(0).random(200_000)
    x = d.sample(u)
    assert x.mean() == pytest.approx(2.0, rel=0.01)
