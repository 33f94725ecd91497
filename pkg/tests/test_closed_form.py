import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.optimize import brentq

from reflectdiff.closed_form import (
    BangBangParams,
    bang_bang_density,
    extremal_kernel,
    grad_reflected_drift_density,
    heat_kernel,
    optimal_bounds,
    q_kappa_explicit,
    reflected_drift_density,
    reflected_heat_kernel,
    scaled_gaussian_tail,
)
from reflectdiff.errors import DomainError

BETAS = [-2.0, -1.0, 0.0, 1.0, 2.0]
TIMES = [0.1, 1.0, 5.0]
STARTS = [0.0, 0.5, 3.0]


def mass(density, *, split=None):
    # integrate over [0, inf), splitting at the start point so quad sees the peak
    pts = [0.0] + ([split] if split else []) + [np.inf]
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        total += quad(density, a, b, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
    return total


# --- heat kernel ------------------------------------------------------------


def test_heat_kernel_at_origin():
    assert heat_kernel(1.0, 0.0, 0.0) == pytest.approx(0.3989422804, abs=1e-10)


def test_heat_kernel_zero_distance():
    assert heat_kernel(2.0, 1.0, 1.0) == pytest.approx(0.2820947918, abs=1e-10)
    assert heat_kernel(2.0, 1.0, 1.0) == pytest.approx(1 / math.sqrt(4 * math.pi), rel=1e-14)


def test_heat_kernel_symmetry():
    assert heat_kernel(0.5, 0.0, 1.0) == heat_kernel(0.5, 1.0, 0.0)


@pytest.mark.parametrize("t", [0.0, -1.0, float("nan")])
def test_heat_kernel_rejects_bad_time(t):
    with pytest.raises(DomainError):
        heat_kernel(t, 0.0, 0.0)


def test_heat_kernel_vectorizes():
    z = np.linspace(-2, 2, 7)
    vals = heat_kernel(1.0, 0.3, z)
    assert vals.shape == (7,)
    assert vals[3] == pytest.approx(heat_kernel(1.0, 0.3, 0.0))


# --- bang-bang density --------------------------------------------------------


def test_bang_bang_zero_drift_is_gaussian():
    val = bang_bang_density(BangBangParams(0.0, 0.0), 0.7, 1.0, -0.2)
    assert val == pytest.approx(heat_kernel(1.0, 0.7, -0.2), rel=1e-14)


def test_bang_bang_even_in_sign_flip():
    p = BangBangParams(1.0, 0.0)
    assert bang_bang_density(p, 0.5, 1.0, 1.5) == pytest.approx(bang_bang_density(p, -0.5, 1.0, -1.5), rel=1e-14)


def test_bang_bang_translation():
    p = BangBangParams(-0.8, 1.3)
    centered = BangBangParams(-0.8, 0.0)
    assert bang_bang_density(p, 2.0, 0.7, 0.4) == pytest.approx(bang_bang_density(centered, 0.7, 0.7, -0.9), rel=1e-14)


@pytest.mark.parametrize("beta", BETAS)
@pytest.mark.parametrize("t", TIMES)
def test_bang_bang_normalized_on_line(beta, t):
    p = BangBangParams(beta, 0.0)
    f = lambda z: bang_bang_density(p, 0.5, t, z)
    total = sum(quad(f, a, b, epsabs=1e-13, limit=200)[0] for a, b in [(-np.inf, 0), (0, 0.5), (0.5, np.inf)])
    assert total == pytest.approx(1.0, abs=1e-8)


def test_bang_bang_large_arguments_stay_finite():
    p = BangBangParams(-30.0, 0.0)
    vals = bang_bang_density(p, 40.0, 0.5, np.array([0.0, 5.0, 60.0]))
    assert np.all(np.isfinite(vals)) and np.all(vals >= 0)


# --- reflected constant-drift density ----------------------------------------


def test_reflected_zero_drift_is_reflected_heat_kernel():
    expected = heat_kernel(1.0, 0.3, 0.8) + heat_kernel(1.0, 0.3, -0.8)
    assert reflected_drift_density(0.0, 1.0, 0.3, 0.8) == pytest.approx(expected, rel=1e-14)


def test_reflected_density_normalized_example():
    assert mass(lambda z: reflected_drift_density(-1.0, 1.0, 0.5, z), split=0.5) == pytest.approx(1.0, abs=1e-8)


def test_reflected_density_matches_integral_form_at_barrier():
    beta, t, x = -1.0, 1.0, 0.5
    integral = quad(lambda z: z * math.exp(-((z + beta * math.sqrt(t)) ** 2) / 2), x / math.sqrt(t), np.inf, epsabs=1e-14)[0]
    assert reflected_drift_density(beta, t, x, 0.0) == pytest.approx(2 / math.sqrt(2 * math.pi * t) * integral, abs=1e-8)


@pytest.mark.parametrize("x,z", [(-0.1, 0.5), (0.5, -0.1)])
def test_reflected_density_rejects_negative_points(x, z):
    with pytest.raises(DomainError):
        reflected_drift_density(1.0, 1.0, x, z)


@pytest.mark.parametrize("beta", BETAS)
@pytest.mark.parametrize("t", TIMES)
@pytest.mark.parametrize("x", STARTS)
def test_every_density_normalized(beta, t, x):
    split = x if x > 0 else None
    assert mass(lambda z: reflected_drift_density(beta, t, x, z), split=split) == pytest.approx(1.0, abs=1e-8)
    if beta >= 0:
        assert mass(lambda z: q_kappa_explicit(beta, t, x, z), split=split) == pytest.approx(1.0, abs=1e-8)
    q = BangBangParams(beta, 0.0)
    line = sum(
        quad(lambda z: bang_bang_density(q, x, t, z), a, b, epsabs=1e-13, limit=200)[0]
        for a, b in [(-np.inf, 0.0), (0.0, max(x, 1e-9)), (max(x, 1e-9), np.inf)]
    )
    assert line == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("beta", [-1.0, 0.0, 1.5])
@pytest.mark.parametrize("s,t", [(0.3, 0.7), (1.0, 1.0), (0.5, 2.0)])
@pytest.mark.parametrize("x,z", [(0.0, 0.4), (0.5, 1.2), (2.0, 0.1)])
def test_chapman_kolmogorov(beta, s, t, x, z):
    f = lambda w: reflected_drift_density(beta, s, x, w) * reflected_drift_density(beta, t, w, z)
    composed = sum(quad(f, a, b, epsabs=1e-12, limit=200)[0] for a, b in [(0, x + 1e-9), (x + 1e-9, np.inf)])
    assert composed == pytest.approx(reflected_drift_density(beta, s + t, x, z), abs=1e-6)


@given(
    beta=st.floats(-3, 3),
    t=st.floats(0.05, 5),
    x=st.floats(0, 4),
    z=st.floats(0, 4),
)
@settings(max_examples=200, deadline=None)
def test_detailed_balance(beta, t, x, z):
    lhs = math.exp(2 * beta * x) * reflected_drift_density(beta, t, x, z)
    rhs = math.exp(2 * beta * z) * reflected_drift_density(beta, t, z, x)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-300)


@given(beta=st.floats(-4, 4), t=st.floats(0.01, 10), x=st.floats(0, 6), z=st.floats(0, 6))
@settings(max_examples=200, deadline=None)
def test_positivity(beta, t, x, z):
    # restrict to values representable as positive doubles
    assume((x - z) ** 2 / (2 * t) + abs(beta) * (x + z) + beta * beta * t < 600)
    assert reflected_drift_density(beta, t, x, z) > 0


# --- explicit drift-towards-barrier density -------------------------------


def test_q_kappa_zero_is_reflected_heat():
    assert q_kappa_explicit(0.0, 1.0, 0.4, 0.9) == pytest.approx(reflected_heat_kernel(1.0, 0.4, 0.9), rel=1e-14)


def test_q_kappa_normalized_example():
    assert mass(lambda z: q_kappa_explicit(1.0, 1.0, 0.5, z), split=0.5) == pytest.approx(1.0, abs=1e-8)


def test_q_kappa_equals_folded_formula_with_negative_drift():
    assert q_kappa_explicit(1.0, 1.0, 0.5, 0.2) == pytest.approx(reflected_drift_density(-1.0, 1.0, 0.5, 0.2), abs=1e-10)


def test_q_kappa_rejects_negative_kappa():
    with pytest.raises(DomainError):
        q_kappa_explicit(-1.0, 1.0, 0.5, 0.2)


# --- bounds ------------------------------------------------------------------


def test_bounds_collapse_without_drift():
    lower, upper = optimal_bounds(0.0, 1.0, 0.3, 0.8)
    assert lower == pytest.approx(reflected_heat_kernel(1.0, 0.3, 0.8), rel=1e-13)
    assert upper == pytest.approx(lower, rel=1e-13)


def test_bounds_are_sharp_at_the_barrier():
    lower, upper = optimal_bounds(1.0, 1.0, 0.5, 0.0)
    assert upper == pytest.approx(q_kappa_explicit(1.0, 1.0, 0.5, 0.0), abs=1e-10)
    assert lower == pytest.approx(reflected_drift_density(1.0, 1.0, 0.5, 0.0), abs=1e-10)


@pytest.mark.parametrize("kappa", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("t", [0.2, 1.0, 3.0])
@pytest.mark.parametrize("x", [0.0, 0.5, 2.0])
@pytest.mark.parametrize("y", [0.0, 0.7, 2.0])
def test_bound_ordering(kappa, t, x, y):
    lower, upper = optimal_bounds(kappa, t, x, y)
    free = reflected_heat_kernel(t, x, y)
    assert lower <= free <= upper


def test_extremal_kernel_is_symmetric_in_the_target_images():
    # the folded pair is even under y -> -y
    assert extremal_kernel(1.0, 0.8, 0.4, 0.9) == pytest.approx(extremal_kernel(1.0, 0.8, 0.4, -0.9), rel=1e-14)


# --- gradient -----------------------------------------------------------------


@pytest.mark.parametrize("x", [0.1, 0.5, 2.0])
def test_gradient_nonpositive_at_barrier_target(x):
    assert grad_reflected_drift_density(-1.0, 1.0, x, 0.0) <= 0


def _gradient_root_check(beta, t, y):
    xs = np.linspace(1e-4, 4.0, 4001)
    signs = np.sign(grad_reflected_drift_density(beta, t, xs, y))
    assert np.any(signs > 0) and np.any(signs < 0), f"no sign change of the gradient in (0, 4) for beta={beta}"
    k = int(np.flatnonzero(signs[1:] != signs[:-1])[0])
    root = brentq(lambda x: grad_reflected_drift_density(beta, t, x, y), xs[k], xs[k + 1], xtol=1e-14)
    step = 1e-5

    def fd(x):
        return (reflected_drift_density(beta, t, x + step, y) - reflected_drift_density(beta, t, x - step, y)) / (2 * step)

    fd_root = brentq(fd, xs[k], xs[k + 1], xtol=1e-14)
    assert root == pytest.approx(fd_root, abs=1e-6)


def test_gradient_root_matches_finite_difference_root():
    # Example as stated (beta = +1, pushing away from the barrier).  With beta
    # the signed drift towards +inf the gradient is negative on all of (0, 4),
    # so this stays red; see the decisions ledger.
    _gradient_root_check(1.0, 0.5, 1.0)


@pytest.mark.parametrize("beta", [-1.0, 0.0])
def test_gradient_root_matches_finite_difference_root_towards_barrier(beta):
    _gradient_root_check(beta, 0.5, 1.0)


@given(beta=st.floats(-2, 2), t=st.floats(0.1, 3), x=st.floats(0.05, 3), y=st.floats(0, 3))
@settings(max_examples=200, deadline=None)
def test_gradient_matches_finite_difference(beta, t, x, y):
    step = 1e-5
    fd = (reflected_drift_density(beta, t, x + step, y) - reflected_drift_density(beta, t, x - step, y)) / (2 * step)
    exact = grad_reflected_drift_density(beta, t, x, y)
    assert exact == pytest.approx(fd, rel=1e-6, abs=1e-8)


# --- tails ---------------------------------------------------------------------


def test_scaled_tail_matches_direct_evaluation_in_safe_range():
    from scipy.stats import norm

    u = np.linspace(-5, 5, 41)
    assert np.allclose(scaled_gaussian_tail(u, 0.3), math.exp(0.3) * norm.sf(u), rtol=1e-13)


def test_scaled_tail_survives_overflowing_factors():
    # exp(800) overflows alone, the product is tiny
    val = scaled_gaussian_tail(60.0, 800.0)
    expected = math.exp(800.0 - 1800.0 - math.log(60.0 * math.sqrt(2 * math.pi)))
    assert val == pytest.approx(expected, rel=1e-3)
