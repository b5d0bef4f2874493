import math
import time

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from conformal_snowflakes.conformal_maps import (
    INFINITY,
    SlitParams,
    SnowflakeParams,
    critical_radius,
    inverse_map,
    is_infinite,
    log_derivative_ratio,
    mobius_to_disc,
    mobius_to_halfplane,
    safe_radius,
    singular_points,
    slit_map,
    slit_map_derivative,
)
from conformal_snowflakes.errors import (
    BracketError,
    BranchError,
    DegenerateBlockError,
    PoleError,
    SingularPointError,
)

mpmath.mp.dps = 40


def mp_slit_map(z, l, s):
    """Independent multiprecision evaluation of the block (principal square root)."""
    z = mpmath.mpc(z) * s
    c = mpmath.mpf(l) ** 2 / (4 * mpmath.mpf(l) + 4)
    u = (z - 1) / (z + 1)
    v = mpmath.sqrt(u * u + c) / mpmath.sqrt(1 + c)
    return complex((1 + v) / (1 - v))


def random_exterior(rng, n, rmin=1.01, rmax=100.0):
    r = np.exp(rng.uniform(math.log(rmin), math.log(rmax), n))
    return r * np.exp(1j * rng.uniform(0, 2 * math.pi, n))


# --- Moebius maps -------------------------------------------------------------


def test_mobius_maps_are_mutually_inverse():
    z = np.array([2.0, 1.5j, -3 + 4j, 0.3 - 1.2j])
    assert np.allclose(mobius_to_disc(mobius_to_halfplane(z)), z, rtol=1e-14)


def test_mobius_special_values():
    assert mobius_to_halfplane(1) == 0
    assert mobius_to_disc(0) == 1
    assert mobius_to_halfplane(INFINITY) == 1
    assert mobius_to_disc(INFINITY) == -1


def test_mobius_poles_raise():
    with pytest.raises(PoleError):
        mobius_to_halfplane(-1)
    with pytest.raises(PoleError):
        mobius_to_disc(1)
    with pytest.raises(ZeroDivisionError):
        mobius_to_disc(np.array([0.5, 1.0]))


@given(st.floats(0, 2 * math.pi), st.floats(1.0001, 50))
def test_halfplane_map_sends_exterior_to_right_half_plane(theta, r):
    assert mobius_to_halfplane(r * complex(math.cos(theta), math.sin(theta))).real > 0


# --- slit map -----------------------------------------------------------------


@pytest.mark.parametrize("l,s", [(7, 1.0), (73, 1.0), (21, 1.002), (73, 1.002), (0.5, 1.3)])
def test_slit_map_matches_multiprecision_oracle(l, s):
    rng = np.random.default_rng(1)
    z = random_exterior(rng, 200)
    got = slit_map(z, SlitParams(l, s))
    want = np.array([mp_slit_map(complex(w), l, s) for w in z])
    assert np.allclose(got, want, rtol=1e-12, atol=0)


def test_slit_endpoints():
    p = SlitParams(73)
    z1, z2 = singular_points(73)
    assert slit_map(1.0, p) == pytest.approx(74.0, rel=1e-14)
    assert abs(slit_map(z1, p) - 1) < 1e-7
    assert abs(slit_map(z2, p) - 1) < 1e-7
    assert slit_map(-1.0, p) == -1
    assert is_infinite(slit_map(INFINITY, p))


def test_boundary_lands_on_circle_or_slit():
    p = SlitParams(21)
    th = np.linspace(0, 2 * math.pi, 2001)
    w = slit_map(np.exp(1j * th), p)
    on_circle = np.abs(np.abs(w) - 1) < 1e-9
    on_slit = (np.abs(w.imag) < 1e-6) & (w.real >= 1 - 1e-9) & (w.real <= 22 + 1e-9)
    assert np.all(on_circle | on_slit)
    assert on_slit.sum() > 10


def test_capacity_is_the_derivative_at_infinity():
    p = SlitParams(73, 1.002)
    z = 1e7 * np.exp(1j * np.linspace(0, 6, 7))
    assert np.allclose(slit_map(z, p) / z, p.capacity, rtol=1e-6)
    assert slit_map_derivative(INFINITY, p) == p.capacity
    assert p.capacity == pytest.approx((1 + 73**2 / 296) * 1.002)


def test_identity_block():
    p = SlitParams(0.0, 1.0)
    assert p.is_identity
    z = random_exterior(np.random.default_rng(2), 100)
    assert np.allclose(slit_map(z, p), z, rtol=1e-15)
    assert np.allclose(slit_map_derivative(z, p), 1.0, rtol=1e-14)


def test_printed_variant_breaks_infinity_normalisation():
    p = SlitParams(73, printed_k=13)
    z = 1e8
    assert abs(slit_map(z, p) / z - p.capacity) > 1e-3


@pytest.mark.parametrize("l", [7, 21, 73])
def test_inverse_round_trip(l):
    rng = np.random.default_rng(l)
    z = random_exterior(rng, 1000)
    p = SlitParams(l, 1.002)
    assert np.max(np.abs(inverse_map(slit_map(z, p), p) - z)) < 1e-9


def test_inverse_on_slit_raises():
    with pytest.raises(BranchError):
        inverse_map(30.0, SlitParams(73))


def test_derivative_matches_central_difference():
    rng = np.random.default_rng(3)
    z = random_exterior(rng, 300, rmin=1.05)
    p = SlitParams(73, 1.002)
    h = 1e-5 * np.abs(z)
    fd = (slit_map(z + h, p) - slit_map(z - h, p)) / (2 * h)
    assert np.max(np.abs(fd / slit_map_derivative(z, p) - 1)) < 1e-6


def test_derivative_at_singular_point_without_cancellation():
    # c = 1 puts z1 at -i, where u^2 + c vanishes exactly in floating point
    l = 2 + 2 * math.sqrt(2)  # c = l^2/(4l+4) = 1
    p = SlitParams(l)
    assert p.c == pytest.approx(1.0)
    with pytest.raises(SingularPointError):
        slit_map_derivative(np.array([-1j]), p)


def test_singular_points_on_unit_circle():
    z1, z2 = singular_points(73)
    assert abs(abs(z1) - 1) < 1e-14
    assert z2 == z1.conjugate()
    want = complex(-5033 / 5625, -292 * math.sqrt(74) / 5625)
    assert abs(z1 - want) < 1e-15


def test_singular_points_degenerate():
    with pytest.raises(DegenerateBlockError):
        singular_points(0)


@settings(max_examples=60)
@given(st.floats(0.1, 100), st.floats(0, 2 * math.pi), st.floats(1.001, 30))
def test_log_derivative_ratio_closed_form(l, theta, r):
    p = SlitParams(l)
    z = r * complex(math.cos(theta), math.sin(theta))
    direct = abs(slit_map_derivative(z, p) / slit_map(z, p))
    assert log_derivative_ratio(z, p) == pytest.approx(direct, rel=1e-9)


def test_log_derivative_ratio_requires_s1():
    with pytest.raises(ValueError):
        log_derivative_ratio(2.0, SlitParams(1, 1.5))
    assert log_derivative_ratio(2.0, SlitParams(0)) == 0.5


# --- critical radius ----------------------------------------------------------


def residual(x, k, p):
    return abs(inverse_map(complex(x), p)) ** k - x


@pytest.mark.parametrize("k,l,s", [(13, 73, 1.002), (13, 73, 1.0), (4, 21, 1.0), (5, 7, 1.0), (34, 1, 1.0)])
def test_critical_radius_matches_brentq(k, l, s):
    p = SlitParams(l, s)
    R = critical_radius(k, p)
    want = brentq(residual, 1 + l + 1e-9, 1e6, args=(k, p), xtol=1e-13)
    assert want <= R <= want + 2e-9


def test_critical_radius_published_value_and_runtime():
    t0 = time.perf_counter()
    R = critical_radius(13, SlitParams(73, 1.002))
    assert time.perf_counter() - t0 < 1.0
    assert abs(R - 76.1568) <= 0.001
    assert safe_radius(R) == pytest.approx(76.2)


def test_critical_radius_errors():
    with pytest.raises(DegenerateBlockError):
        critical_radius(2, SlitParams(0))
    with pytest.raises(ValueError):
        critical_radius(13, SlitParams(73), tol=0)


def test_critical_radius_upper_end_of_bracket():
    p = SlitParams(73, 1.002)
    R = critical_radius(13, p, tol=1e-3)
    assert residual(R, 13, p) > 0


def test_params_validation():
    with pytest.raises(ValueError):
        SlitParams(-1)
    with pytest.raises(ValueError):
        SlitParams(1, 0.99)
    with pytest.raises(ValueError):
        SnowflakeParams.make(1, 1, 1)
    with pytest.raises(ValueError):
        SnowflakeParams(SlitParams(1), 2.5, 1.0)
