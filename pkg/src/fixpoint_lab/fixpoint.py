"""Generic fixed-point solvers over implicit operators ``G(y, x)``.

An operator is any callable ``op(y, x) -> array`` with the same shape as ``y``;
``ImplicitOp`` wraps one with declared dimensions when shape checking is
wanted. States may be vectors or stacked batches; residuals are always the
Euclidean (Frobenius) norm of ``y_t - y_{t-1}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .numerics import Rng

OpFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


class NonFiniteIterate(FloatingPointError):
    """Raised when an iterate leaves the finite floats (usually a non-contractive op)."""

    def __init__(self, iteration: int):
        super().__init__(f"non-finite iterate at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class ImplicitOp:
    fn: OpFn
    state_dim: int
    input_dim: int

    def __call__(self, y: np.ndarray, x: np.ndarray) -> np.ndarray:
        out = np.asarray(self.fn(y, x), dtype=np.float64)
        if out.shape[-1] != self.state_dim:
            raise ValueError(f"operator returned {out.shape[-1]} entries, expected {self.state_dim}")
        return out


@dataclass
class SolveConfig:
    max_iter: int = 1000
    tol: float = 1e-8
    anderson_depth: int = 5
    anderson_mixing: float = 1.0
    anderson_ridge: float = 1e-10

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.anderson_depth < 1:
            raise ValueError("anderson_depth must be >= 1")
        if not 0 < self.anderson_mixing <= 1:
            raise ValueError("anderson_mixing must lie in (0, 1]")


@dataclass
class IterationTrace:
    iterates: list[np.ndarray] = field(default_factory=list)
    residuals: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.residuals)

    @property
    def solution(self) -> np.ndarray:
        return self.iterates[-1]


def _checked(y: np.ndarray, t: int) -> np.ndarray:
    if not np.all(np.isfinite(y)):
        raise NonFiniteIterate(t)
    return y


def _as_state(y0) -> np.ndarray:
    return np.array(y0, dtype=np.float64, copy=True)


def picard_solve(op: OpFn, x, y0, cfg: SolveConfig) -> IterationTrace:
    """Plain iteration ``y_t = G(y_{t-1}, x)`` until the step norm drops to ``cfg.tol``."""
    y = _as_state(y0)
    trace = IterationTrace(iterates=[y])
    for t in range(1, cfg.max_iter + 1):
        y_new = _checked(np.asarray(op(y, x), dtype=np.float64), t)
        r = float(np.linalg.norm(y_new - y))
        trace.iterates.append(y_new)
        trace.residuals.append(r)
        y = y_new
        if r <= cfg.tol:
            trace.converged = True
            break
    return trace


def anderson_solve(op: OpFn, x, y0, cfg: SolveConfig) -> IterationTrace:
    """Anderson(m) acceleration with ridge-regularised least-squares mixing.

    Keeps the last ``m + 1`` pairs ``(y_k, G(y_k))``. The mixing weights solve
    the normal equations of ``min ||f_k - dF g||`` with the ridge scaled by the
    largest diagonal entry of ``dF^T dF``; if that solve fails or yields
    non-finite weights the step falls back to plain Picard.
    """
    y = _as_state(y0)
    shape = y.shape
    trace = IterationTrace(iterates=[y])
    ys: list[np.ndarray] = []
    gs: list[np.ndarray] = []
    m = cfg.anderson_depth
    beta = cfg.anderson_mixing
    for t in range(1, cfg.max_iter + 1):
        g = _checked(np.asarray(op(y, x), dtype=np.float64), t)
        ys.append(y.ravel())
        gs.append(g.ravel())
        if len(ys) > m + 1:
            ys.pop(0)
            gs.pop(0)
        f_k = gs[-1] - ys[-1]
        y_next = None
        if len(ys) > 1:
            Y = np.stack(ys, axis=1)
            G = np.stack(gs, axis=1)
            F = G - Y
            dF = np.diff(F, axis=1)
            dY = np.diff(Y, axis=1)
            gram = dF.T @ dF
            scale = float(np.max(np.diag(gram)))
            if scale > 0 and np.isfinite(scale):
                gram = gram + cfg.anderson_ridge * scale * np.eye(gram.shape[0])
                try:
                    gamma = np.linalg.solve(gram, dF.T @ f_k)
                except np.linalg.LinAlgError:
                    gamma = None
                if gamma is not None and np.all(np.isfinite(gamma)):
                    y_bar = ys[-1] - dY @ gamma
                    f_bar = f_k - dF @ gamma
                    y_next = y_bar + beta * f_bar
        if y_next is None:
            y_next = ys[-1] + beta * f_k
        y_next = _checked(y_next.reshape(shape), t)
        r = float(np.linalg.norm(y_next - y))
        trace.iterates.append(y_next)
        trace.residuals.append(r)
        y = y_next
        if r <= cfg.tol:
            trace.converged = True
            break
    return trace


def iterate_exactly(op: OpFn, x, y0, T: int) -> list[np.ndarray]:
    """Exactly ``T`` applications of ``op``; returns ``[y_0, ..., y_T]``."""
    if T < 0:
        raise ValueError("T must be >= 0")
    y = _as_state(y0)
    out = [y]
    for t in range(1, T + 1):
        y = _checked(np.asarray(op(y, x), dtype=np.float64), t)
        out.append(y)
    return out


def iterate_checkpoints(op: OpFn, x, y0, checkpoints: Iterable[int]) -> dict[int, np.ndarray]:
    """Same trajectory as ``iterate_exactly`` but keeps only the requested ``t``.

    For horizons in the millions where storing every iterate is pointless.
    """
    wanted = sorted(set(int(t) for t in checkpoints))
    if wanted and wanted[0] < 0:
        raise ValueError("checkpoints must be >= 0")
    y = _as_state(y0)
    kept: dict[int, np.ndarray] = {}
    t = 0
    for target in wanted:
        while t < target:
            t += 1
            y = np.asarray(op(y, x), dtype=np.float64)
        _checked(y, t)
        kept[target] = y.copy()
    return kept


def estimate_contraction_modulus(
    op: OpFn,
    x,
    n_pairs: int,
    rng: Rng,
    state_dim: int | None = None,
    box: float = 5.0,
) -> float:
    """Largest sampled ratio ``|G(y1,x) - G(y2,x)| / |y1 - y2|`` over ``[-box, box]^n``."""
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    if state_dim is None:
        state_dim = getattr(op, "state_dim", None)
        if state_dim is None:
            raise ValueError("state_dim is required for a bare callable")
    best = 0.0
    done = 0
    while done < n_pairs:
        y1 = rng.uniform(-box, box, state_dim)
        y2 = rng.uniform(-box, box, state_dim)
        dist = float(np.linalg.norm(y1 - y2))
        if dist == 0.0:
            continue
        diff = np.asarray(op(y1, x)) - np.asarray(op(y2, x))
        best = max(best, float(np.linalg.norm(diff)) / dist)
        done += 1
    return best
