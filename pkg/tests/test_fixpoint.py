import numpy as np
import pytest
from hypothesis import given, strategies as st

from fixpoint_lab.fixpoint import (ImplicitOp, NonFiniteIterate, SolveConfig, anderson_solve,
                                   estimate_contraction_modulus, iterate_checkpoints, iterate_exactly, picard_solve)
from fixpoint_lab.numerics import Rng


def half_plus_one(y, x):
    return 0.5 * y + 1.0


def test_picard_worked_example():
    tr = picard_solve(half_plus_one, None, np.zeros(1), SolveConfig(tol=1e-6))
    # residuals halve from 1
    np.testing.assert_allclose(tr.residuals[:4], [1.0, 0.5, 0.25, 0.125])
    assert tr.converged
    assert abs(tr.solution[0] - 2.0) <= 2e-6


def test_anderson_depth_one_is_secant():
    tr = anderson_solve(half_plus_one, None, np.zeros(1), SolveConfig(tol=1e-12, anderson_depth=1))
    assert tr.converged and tr.iterations <= 4
    np.testing.assert_allclose(tr.solution, [2.0], atol=1e-12)


def test_iterate_exactly_reciprocal():
    op = lambda y, x: y - 0.5 * (x * y - 1.0)
    traj = iterate_exactly(op, np.array([1.0]), np.zeros(1), 3)
    np.testing.assert_allclose(np.concatenate(traj), [0.0, 0.5, 0.75, 0.875])


def test_checkpoints_match_full_trajectory():
    op = lambda y, x: np.cos(y) + x
    x = np.array([0.1, 0.4])
    traj = iterate_exactly(op, x, np.zeros(2), 20)
    kept = iterate_checkpoints(op, x, np.zeros(2), [1, 7, 20])
    for t in (1, 7, 20):
        np.testing.assert_array_equal(kept[t], traj[t])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_raises_with_iteration():
    with pytest.raises(NonFiniteIterate) as e:
        picard_solve(lambda y, x: 10.0 * y * y + 1.0, None, np.ones(1), SolveConfig(max_iter=100))
    assert e.value.iteration > 0


def test_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(tol=0.0)
    with pytest.raises(ValueError):
        SolveConfig(anderson_mixing=1.5)


@given(st.floats(0.05, 0.95), st.integers(0, 10**6))
def test_solvers_agree_on_random_affine(mod, seed):
    rng = Rng(seed)
    n = 6
    M = rng.normal(size=n * n).reshape(n, n)
    M *= mod / np.linalg.norm(M, 2)
    c = rng.normal(size=n)
    exact = np.linalg.solve(np.eye(n) - M, c)
    op = lambda y, x: M @ y + c
    cfg = SolveConfig(max_iter=5000, tol=1e-11)
    p = picard_solve(op, None, np.zeros(n), cfg)
    a = anderson_solve(op, None, np.zeros(n), cfg)
    assert p.converged and a.converged
    # a step of size tol leaves error at most tol * mod / (1 - mod)
    bound = 1e-11 * mod / (1 - mod) * 1.01 + 1e-13
    assert np.linalg.norm(p.solution - exact) <= bound
    assert np.linalg.norm(a.solution - exact) <= 1e-8


def test_contraction_modulus_of_scaled_rotation():
    th = 0.7
    Q = 0.6 * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    op = ImplicitOp(lambda y, x: Q @ y + x, 2, 2)
    est = estimate_contraction_modulus(op, np.ones(2), 50, Rng(0))
    assert abs(est - 0.6) < 1e-12
