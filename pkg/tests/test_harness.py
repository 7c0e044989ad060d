import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fixpoint_lab.harness import (PairedDataset, curve, curve_from_trajectories, curve_header, empirical_lipschitz,
                                  psnr, relative_error, write_curve_csv)
from fixpoint_lab.numerics import Rng
from fixpoint_lab.util import read_csv


def linear_dataset(N=6, J=2, seed=0):
    rng = Rng(seed)
    x0 = rng.normal(size=N * 3).reshape(N, 1, 3)
    d = rng.normal(size=N * J * 3).reshape(N, J, 3) * 1e-2
    x = np.concatenate([x0, x0 + d], axis=1)
    return PairedDataset(x, 2.0 * x, ["a", "b"])


def test_linear_map_lipschitz_is_scale():
    ds = linear_dataset()
    assert empirical_lipschitz(lambda v: 2.0 * v, ds, "a") == pytest.approx(2.0)
    assert empirical_lipschitz(lambda v: -0.5 * v, ds, 2) == pytest.approx(0.5)


def test_identical_perturbation_rejected():
    x = np.zeros((2, 2, 1))
    x[0, 1] = 1.0
    with pytest.raises(ValueError, match=r"\(1, 1\)"):
        PairedDataset(x, x)


def test_relative_error_and_psnr_examples():
    assert relative_error([1.0, 0.0], [0.0, 0.0]) == pytest.approx(1e8)
    assert relative_error([3.0, 4.0], [0.0, 5.0]) == pytest.approx(np.sqrt(10) / 5, rel=1e-8)
    assert psnr([1.0, 1.0], [1.0, 1.0], 1.0) == math.inf
    # mse 0.25 with max 1 -> 10 log10(4)
    assert psnr([0.5, 0.5], [0.0, 0.0], 1.0) == pytest.approx(10 * np.log10(4))


def test_relative_error_rejects_bad_eps():
    with pytest.raises(ValueError):
        relative_error([1.0], [1.0], 0.0)


def test_curve_rows_and_csv(tmp_path):
    ds = linear_dataset()
    model = lambda x, T: [2.0 * x * (1 - 0.5**t) for t in range(1, T + 1)]
    rows = curve(model, ds, 4)
    assert [r.t for r in rows] == [1, 2, 3, 4]
    np.testing.assert_allclose(rows[0].L, [1.0, 1.0])
    np.testing.assert_allclose([r.E_mean for r in rows], [0.5, 0.25, 0.125, 0.0625])
    batched = curve(lambda x, T: [2.0 * x * (1 - 0.5**t) for t in range(1, T + 1)], ds, 4, batched=True)
    assert [r.E_mean for r in batched] == [r.E_mean for r in rows]
    write_curve_csv(tmp_path / "c.csv", rows, ds.j_labels)
    head, body = read_csv(tmp_path / "c.csv")
    assert head == curve_header(ds.j_labels) == ["t", "L_t_a", "L_t_b", "E_mean", "E_std"]
    assert len(body) == 4


def test_curve_reports_failing_sample():
    ds = linear_dataset()

    def model(x, T):
        if x[0] == ds.x[2, 1, 0]:
            raise ValueError("boom")
        return [x] * T

    with pytest.raises(RuntimeError, match=r"i=2, j=1"):
        curve(model, ds, 2)


def test_trajectory_shape_checked():
    with pytest.raises(ValueError):
        curve_from_trajectories(np.zeros((2, 3, 3, 1)), linear_dataset())


@given(st.floats(0.1, 10.0), st.integers(0, 1000))
def test_lipschitz_scales_with_map(a, seed):
    ds = linear_dataset(seed=seed)
    assert empirical_lipschitz(lambda v: a * v, ds, 1) == pytest.approx(a, rel=1e-9)
