"""Constructive regular operator for 1-D targets with singular sets.

Given a target ``F`` that is only locally Lipschitz on its domain (it blows up
near a finite set ``D``), build a step size ``eps(x)`` that vanishes as ``x``
approaches ``D`` and use it in

    G(y, x) = F(x) + (1 - eps(x)) * (y - F(x)).

``G`` is affine in ``y`` with modulus ``1 - eps(x) < 1`` and its fixed point is
``F(x)``. ``eps`` comes from the distance-to-``D`` profile:

    h1(r) = sup |F'| over grid points with d(x, D) >= r
    h2(r) = sup |F|  over the same points
    h_hat(r) = 1 / (h1(r) + h2(r) + 1)
    eps_hat(r) = int_0^r h_hat        (trapezoid on the radius grid)
    eps(x) = eps_hat(d) / (1 + eps_hat(d)),  d = min(d(x, D), r_max)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .fixpoint import ImplicitOp
from .util import write_csv


@dataclass(frozen=True)
class Target1D:
    eval: Callable[[np.ndarray], np.ndarray]
    singular_set: tuple[float, ...]
    domain: tuple[tuple[float, float], ...]
    name: str = "custom"

    def __post_init__(self):
        for lo, hi in self.domain:
            if not lo < hi:
                raise ValueError(f"empty domain interval [{lo}, {hi}]")
            for d in self.singular_set:
                if lo <= d <= hi:
                    raise ValueError(f"singular point {d} lies inside [{lo}, {hi}]")

    def __call__(self, x):
        return self.eval(np.asarray(x, dtype=np.float64))

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        inside = np.zeros(x.shape, dtype=bool)
        for lo, hi in self.domain:
            inside |= (x >= lo) & (x <= hi)
        return inside

    def distance_to_singular(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if not self.singular_set:
            return np.full(x.shape, np.inf)
        pts = np.asarray(self.singular_set)
        return np.min(np.abs(x[..., None] - pts), axis=-1)

    @property
    def diameter(self) -> float:
        return max(hi for _, hi in self.domain) - min(lo for lo, _ in self.domain)

    def grid(self, per_interval: int) -> np.ndarray:
        return np.concatenate([np.linspace(lo, hi, per_interval) for lo, hi in self.domain])


def reciprocal_target() -> Target1D:
    return Target1D(lambda x: 1.0 / x, (0.0,), ((-1.0, -0.01), (0.01, 1.0)), "reciprocal")


def positive_reciprocal_target() -> Target1D:
    return Target1D(lambda x: 1.0 / x, (0.0,), ((0.01, 1.0),), "reciprocal")


def tan_target() -> Target1D:
    edge = math.pi / 2 - 0.01
    return Target1D(np.tan, (-math.pi / 2, math.pi / 2), ((-edge, edge),), "tan")


def log_target() -> Target1D:
    return Target1D(np.log, (0.0,), ((0.01, 1.0),), "log")


def sqrt_target() -> Target1D:
    return Target1D(np.sqrt, (0.0,), ((0.0001, 1.0),), "sqrt")


SHIPPED_TARGETS = {
    "reciprocal": reciprocal_target,
    "reciprocal_pos": positive_reciprocal_target,
    "tan": tan_target,
    "log": log_target,
    "sqrt": sqrt_target,
}


@dataclass
class EpsilonProfile:
    r_grid: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    h_hat: np.ndarray
    eps_hat: np.ndarray
    x_grid: np.ndarray
    dist_sorted: np.ndarray = field(repr=False, default=None)
    h1_suffix: np.ndarray = field(repr=False, default=None)
    h2_suffix: np.ndarray = field(repr=False, default=None)

    def _suffix_at(self, suffix: np.ndarray, r) -> np.ndarray:
        idx = np.searchsorted(self.dist_sorted, np.asarray(r, dtype=np.float64), side="left")
        ok = idx < self.dist_sorted.size
        return np.where(ok, suffix[np.minimum(idx, self.dist_sorted.size - 1)], 0.0)

    def h1_at(self, r) -> np.ndarray:
        """sup |F'| over grid points at distance >= r from D (not interpolated)."""
        return self._suffix_at(self.h1_suffix, r)

    def h2_at(self, r) -> np.ndarray:
        return self._suffix_at(self.h2_suffix, r)

    @property
    def r_max(self) -> float:
        return float(self.r_grid[-1])

    def eps_hat_at(self, r) -> np.ndarray:
        r = np.minimum(np.asarray(r, dtype=np.float64), self.r_max)
        return np.interp(r, self.r_grid, self.eps_hat)

    def to_csv(self, path) -> None:
        write_csv(path, ["r", "h_hat", "eps_hat"], zip(self.r_grid, self.h_hat, self.eps_hat))


def _suffix_max(values: np.ndarray) -> np.ndarray:
    return np.maximum.accumulate(values[::-1])[::-1]


def build_profile(
    target: Target1D,
    grid_resolution: int = 4096,
    r_max: float | None = None,
    n_radii: int = 1024,
) -> EpsilonProfile:
    """Tabulate ``h1, h2, h_hat, eps_hat`` on a radius grid ``[0, r_max]``.

    ``grid_resolution`` points are laid per domain interval; derivatives are
    second-order finite differences with the grid spacing as step (one-sided at
    interval ends so no evaluation leaves the domain).
    """
    if grid_resolution < 64:
        raise ValueError("grid_resolution must be >= 64")
    if n_radii < 512:
        raise ValueError("n_radii must be >= 512")
    xs, slopes, mags = [], [], []
    for lo, hi in target.domain:
        x = np.linspace(lo, hi, grid_resolution)
        fx = np.asarray(target(x), dtype=np.float64)
        if not np.all(np.isfinite(fx)):
            raise ValueError(f"target {target.name} is not finite on [{lo}, {hi}]")
        xs.append(x)
        slopes.append(np.abs(np.gradient(fx, x[1] - x[0], edge_order=2)))
        mags.append(np.abs(fx))
    x_grid = np.concatenate(xs)
    slope = np.concatenate(slopes)
    mag = np.concatenate(mags)

    if r_max is None:
        # cover every attained distance; with no singular points fall back to the diameter
        far = target.distance_to_singular(x_grid)
        r_max = float(np.max(far)) if np.all(np.isfinite(far)) else target.diameter
    if not r_max > 0:
        raise ValueError("r_max must be > 0")
    dist = np.minimum(target.distance_to_singular(x_grid), r_max)
    order = np.argsort(dist, kind="stable")
    dist_sorted = dist[order]
    h1_suffix = _suffix_max(slope[order])
    h2_suffix = _suffix_max(mag[order])

    r_grid = np.linspace(0.0, r_max, n_radii)
    first = np.searchsorted(dist_sorted, r_grid, side="left")
    has_points = first < dist_sorted.size
    if not np.any(has_points[1:]):
        raise ValueError("degenerate domain: no grid point is a positive distance from D")
    idx = np.minimum(first, dist_sorted.size - 1)
    h1 = np.where(has_points, h1_suffix[idx], 0.0)
    h2 = np.where(has_points, h2_suffix[idx], 0.0)
    # radii past every grid point have empty D_r; sup over the empty set is taken as 0
    h_hat = 1.0 / (h1 + h2 + 1.0)
    eps_hat = np.concatenate([[0.0], np.cumsum(0.5 * (h_hat[1:] + h_hat[:-1]) * np.diff(r_grid))])
    return EpsilonProfile(r_grid, h1, h2, h_hat, eps_hat, x_grid, dist_sorted, h1_suffix, h2_suffix)


@dataclass
class RegularOperator1D:
    target: Target1D
    profile: EpsilonProfile
    _singular: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._singular = np.asarray(self.target.singular_set, dtype=np.float64)

    def _check(self, x: np.ndarray, allow_singular: bool) -> None:
        ok = self.target.contains(x)
        if allow_singular and self._singular.size:
            ok |= np.isin(x, self._singular)
        if not np.all(ok):
            bad = np.asarray(x)[~ok].ravel()[0]
            raise ValueError(f"x={bad} lies outside the domain of {self.target.name}")

    def epsilon(self, x):
        xa = np.asarray(x, dtype=np.float64)
        self._check(xa, allow_singular=True)
        u = self.profile.eps_hat_at(self.target.distance_to_singular(xa))
        out = u / (1.0 + u)
        return float(out) if np.ndim(x) == 0 else out

    def apply(self, y, x):
        xa = np.asarray(x, dtype=np.float64)
        self._check(xa, allow_singular=False)
        fx = self.target(xa)
        eps = self.epsilon(xa)
        out = fx + (1.0 - eps) * (np.asarray(y, dtype=np.float64) - fx)
        return float(out) if np.ndim(out) == 0 else out

    def as_op(self) -> ImplicitOp:
        return ImplicitOp(lambda y, x: np.atleast_1d(self.apply(y, x)), 1, 1)

    def frozen(self, xs: np.ndarray) -> "FrozenRegularOp":
        """Vectorised operator with ``F`` and ``eps`` precomputed on fixed inputs."""
        xs = np.asarray(xs, dtype=np.float64)
        self._check(xs, allow_singular=False)
        return FrozenRegularOp(self.target(xs), 1.0 - self.epsilon(xs))

    def curve_csv(self, path, xs: Sequence[float]) -> None:
        xs = np.asarray(xs, dtype=np.float64)
        eps = self.epsilon(xs)
        fx = self.target(xs)
        write_csv(path, ["x", "eps_x", "F_x"], zip(xs, eps, fx))


@dataclass(frozen=True)
class FrozenRegularOp:
    """``G(y) = F + keep * (y - F)`` with ``keep = 1 - eps`` fixed per coordinate."""

    fx: np.ndarray
    keep: np.ndarray

    def __call__(self, y, x=None):
        return self.fx + self.keep * (y - self.fx)


def build_operator(target: Target1D, grid_resolution: int = 4096, r_max: float | None = None,
                   n_radii: int = 1024) -> RegularOperator1D:
    return RegularOperator1D(target, build_profile(target, grid_resolution, r_max, n_radii))


def reciprocal_op(y, x, eta: float):
    """``y - sign(x) * eta * (x*y - 1)``: the singularity-free implicit form of 1/x."""
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    x = np.asarray(x, dtype=np.float64)
    if np.any(x == 0):
        raise ValueError("x = 0 is the excluded singular point")
    out = y - np.sign(x) * eta * (x * y - 1.0)
    return float(out) if np.ndim(out) == 0 else out


def naive_op(y, x, eta: float, F: Callable):
    """Plain averaging ``(1 - eta) y + eta F(x)``."""
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    return (1.0 - eta) * np.asarray(y, dtype=np.float64) + eta * np.asarray(F(x), dtype=np.float64)


def empirical_lipschitz_1d(xs: np.ndarray, ys: np.ndarray, pairs: str = "all") -> float:
    """Largest difference quotient over grid pairs (``"all"`` or ``"adjacent"``)."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if pairs == "adjacent":
        order = np.argsort(xs)
        return float(np.max(np.abs(np.diff(ys[order])) / np.diff(xs[order])))
    dx = np.abs(xs[:, None] - xs[None, :])
    dy = np.abs(ys[:, None] - ys[None, :])
    mask = dx > 0
    return float(np.max(dy[mask] / dx[mask]))
