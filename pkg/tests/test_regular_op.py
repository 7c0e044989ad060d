import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from fixpoint_lab.fixpoint import SolveConfig, picard_solve
from fixpoint_lab.regular_op import (SHIPPED_TARGETS, build_operator, empirical_lipschitz_1d, naive_op,
                                     positive_reciprocal_target, reciprocal_op, reciprocal_target)


@pytest.fixture(scope="module")
def recip_op():
    return build_operator(positive_reciprocal_target())


def eps_oracle(r, n_grid=4096):
    """Exact integral of h_hat with analytic h1 = 1/x^2, h2 = 1/x taken at the
    first grid point at distance >= s; h_hat is piecewise constant in s."""
    xs = np.linspace(0.01, 1.0, n_grid)
    cuts = np.concatenate([[0.0], xs[xs < r], [r]])
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        x = xs[np.searchsorted(xs, b, side="left")]
        total += (b - a) / (1.0 / x**2 + 1.0 / x + 1.0)
    return total / (1.0 + total)


@pytest.mark.parametrize("x", [0.01, 0.05, 0.1, 0.5, 1.0])
def test_epsilon_matches_oracle(recip_op, x):
    # residual gap at x = 0.01: the one-sided slope (0.11%) plus interpolating
    # eps_hat across the jump of h_hat between radius nodes (0.22%)
    assert recip_op.epsilon(x) == pytest.approx(eps_oracle(x), rel=4e-3)


def test_epsilon_close_to_continuum(recip_op):
    h = lambda s: 1.0 / (1e4 + 100.0 + 1.0) if s <= 0.01 else 1.0 / (1.0 / s**2 + 1.0 / s + 1.0)
    v = quad(h, 0.0, 1.0, points=[0.01], limit=200)[0]
    assert recip_op.epsilon(1.0) == pytest.approx(v / (1 + v), rel=1e-3)


def test_profile_sup_values(recip_op):
    prof = recip_op.profile
    assert prof.h2_at(0.01) == pytest.approx(100.0)
    assert prof.h1_at(0.01) == pytest.approx(1e4, rel=2e-3)
    assert prof.h1_at(0.5) == pytest.approx(4.0, rel=1e-3)


def test_profile_is_monotone(recip_op):
    p = recip_op.profile
    assert np.all(np.diff(p.h1) <= 0) and np.all(np.diff(p.h2) <= 0)
    assert np.all(np.diff(p.eps_hat) > 0)


def test_build_profile_rejects_coarse_grids():
    with pytest.raises(ValueError):
        build_operator(positive_reciprocal_target(), grid_resolution=10)
    with pytest.raises(ValueError):
        build_operator(positive_reciprocal_target(), n_radii=100)


def test_epsilon_zero_on_singular_set():
    op = build_operator(reciprocal_target())
    assert op.epsilon(0.0) == 0.0
    with pytest.raises(ValueError):
        op.apply(1.0, 0.0)


def test_outside_domain_rejected(recip_op):
    with pytest.raises(ValueError):
        recip_op.apply(0.0, 2.0)


@pytest.mark.parametrize("name", sorted(SHIPPED_TARGETS))
def test_fixed_point_is_target(name):
    tgt = SHIPPED_TARGETS[name]()
    op = build_operator(tgt, grid_resolution=512, n_radii=512)
    xs = tgt.grid(20)
    eps = op.epsilon(xs)
    xs = xs[eps >= 1e-3]  # Picard needs ~1/eps steps
    for x in xs[::3]:
        tr = picard_solve(op.as_op(), x, np.zeros(1), SolveConfig(max_iter=200_000, tol=1e-10))
        assert abs(tr.solution[0] - tgt(x)) <= 1e-6


@given(st.floats(0.01, 1.0), st.floats(-50, 50), st.floats(-50, 50))
def test_modulus_is_one_minus_eps(x, y1, y2):
    op = build_operator(positive_reciprocal_target(), grid_resolution=256, n_radii=512)
    if abs(y1 - y2) < 1e-3:
        return
    ratio = abs(op.apply(y1, x) - op.apply(y2, x)) / abs(y1 - y2)
    assert ratio == pytest.approx(1.0 - op.epsilon(x), abs=1e-9)


def test_epsilon_is_one_lipschitz(recip_op):
    xs = np.linspace(0.01, 1.0, 1500)
    assert empirical_lipschitz_1d(xs, recip_op.epsilon(xs)) <= 1 + 1e-6


def test_reciprocal_closed_form():
    x = np.linspace(0.05, 1.0, 50)
    y = np.zeros_like(x)
    for t in range(1, 31):
        y = reciprocal_op(y, x, 0.5)
        np.testing.assert_allclose(np.abs(y - 1 / x), np.abs(1 - 0.5 * x) ** t / x, atol=1e-12)


def test_reciprocal_negative_side_converges():
    y = np.zeros(3)
    x = np.array([-0.5, -1.0, -1.5])
    for _ in range(200):
        y = reciprocal_op(y, x, 0.5)
    np.testing.assert_allclose(y, 1 / x)


def test_reciprocal_rejects_bad_inputs():
    with pytest.raises(ValueError):
        reciprocal_op(0.0, 0.0, 0.5)
    with pytest.raises(ValueError):
        reciprocal_op(0.0, 1.0, 1.0)


def test_naive_op_fixed_point():
    assert naive_op(2.0, 0.5, 0.3, lambda v: 1 / v) == pytest.approx(2.0)


def test_lipschitz_pair_modes():
    xs = np.array([0.0, 1.0, 3.0])
    ys = np.array([0.0, 2.0, 2.5])
    assert empirical_lipschitz_1d(xs, ys) == 2.0
    assert empirical_lipschitz_1d(xs, ys, "adjacent") == 2.0


def test_frozen_matches_apply(recip_op):
    xs = np.linspace(0.02, 1.0, 7)
    y = np.linspace(-1, 1, 7)
    np.testing.assert_allclose(recip_op.frozen(xs)(y), recip_op.apply(y, xs), rtol=0, atol=1e-13)
