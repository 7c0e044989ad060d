"""Empirical Lipschitz, relative error and PSNR curves over perturbed datasets.

A ``PairedDataset`` holds originals ``(x_i, y*_i)`` plus, for every perturbation
mode ``j``, perturbed pairs ``(x_ij, y*_ij)``. Index ``j = 0`` is the original.

    L_t(j) = max_i ||y_t(x_i) - y_t(x_ij)|| / ||x_i - x_ij||      (j >= 1)
    E_t    = mean/std over all (i, j >= 0) of ||y_t - y*|| / (||y*|| + eps)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .util import write_csv

EPS_DEN = 1e-8


@dataclass
class PairedDataset:
    """``x[i, j]`` and ``y_star[i, j]`` with ``j = 0`` the original sample."""

    x: np.ndarray  # (N, J + 1, dx)
    y_star: np.ndarray  # (N, J + 1, dy)
    j_labels: list[str] = field(default_factory=list)
    seeds: list[list[int]] | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y_star = np.asarray(self.y_star, dtype=np.float64)
        if self.x.ndim != 3 or self.y_star.ndim != 3 or self.x.shape[:2] != self.y_star.shape[:2]:
            raise ValueError("x and y_star must be (N, J+1, dim) arrays with matching N, J")
        if not self.j_labels:
            self.j_labels = [f"m{j}" for j in range(1, self.n_modes + 1)]
        if len(self.j_labels) != self.n_modes:
            raise ValueError("one label per perturbation mode is required")
        gaps = np.linalg.norm(self.x[:, 1:] - self.x[:, :1], axis=-1)
        if gaps.size and np.min(gaps) == 0.0:
            i, j = np.unravel_index(int(np.argmin(gaps)), gaps.shape)
            raise ValueError(f"perturbed input ({i}, {j + 1}) equals its original")

    @property
    def n_samples(self) -> int:
        return self.x.shape[0]

    @property
    def n_modes(self) -> int:
        return self.x.shape[1] - 1

    def mode_index(self, mode) -> int:
        if isinstance(mode, str):
            return self.j_labels.index(mode) + 1
        if not 1 <= mode <= self.n_modes:
            raise ValueError(f"mode {mode} not in 1..{self.n_modes}")
        return int(mode)


@dataclass
class CurveRow:
    t: int
    L: list[float]
    E_mean: float
    E_std: float
    P_mean: float | None = None
    P_std: float | None = None


def _lipschitz_from_outputs(x: np.ndarray, y: np.ndarray, j: int) -> float:
    den = np.linalg.norm(x[:, j] - x[:, 0], axis=-1)
    if np.any(den == 0):
        raise ZeroDivisionError(f"zero input distance for mode {j}")
    num = np.linalg.norm(y[:, j] - y[:, 0], axis=-1)
    return float(np.max(num / den))


def empirical_lipschitz(y_of: Callable[[np.ndarray], np.ndarray], dataset: PairedDataset, mode) -> float:
    """Max over ``i`` of output-to-input distance ratios for one perturbation mode."""
    j = dataset.mode_index(mode)
    y0 = np.stack([np.atleast_1d(y_of(xi)) for xi in dataset.x[:, 0]])
    yj = np.stack([np.atleast_1d(y_of(xi)) for xi in dataset.x[:, j]])
    return _lipschitz_from_outputs(dataset.x[:, [0, j]], np.stack([y0, yj], axis=1), 1)


def relative_error(y, y_star, eps_denominator: float = EPS_DEN) -> float:
    if not eps_denominator > 0:
        raise ValueError("eps_denominator must be > 0")
    y = np.asarray(y, dtype=np.float64)
    y_star = np.asarray(y_star, dtype=np.float64)
    return float(np.linalg.norm(y - y_star) / (np.linalg.norm(y_star) + eps_denominator))


def psnr(y, y_star, max_val: float) -> float:
    """``10 log10(n MAX^2 / ||y - y*||^2)`` in dB; ``+inf`` when ``y == y*``."""
    if not max_val > 0:
        raise ValueError("max_val must be > 0")
    y = np.asarray(y, dtype=np.float64).ravel()
    y_star = np.asarray(y_star, dtype=np.float64).ravel()
    err = float(np.sum((y - y_star) ** 2))
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(y.size * max_val**2 / err)


def _row_from_outputs(t: int, ds: PairedDataset, y: np.ndarray, eps_den: float,
                      max_val: float | None) -> CurveRow:
    L = [_lipschitz_from_outputs(ds.x, y, j) for j in range(1, ds.n_modes + 1)]
    diff = np.linalg.norm(y - ds.y_star, axis=-1)
    E = (diff / (np.linalg.norm(ds.y_star, axis=-1) + eps_den)).ravel()
    row = CurveRow(t, L, float(np.mean(E)), float(np.std(E)))
    if max_val is not None:
        P = np.array([psnr(a, b, max_val) for a, b in zip(y.reshape(-1, y.shape[-1]),
                                                          ds.y_star.reshape(-1, y.shape[-1]))])
        row.P_mean, row.P_std = float(np.mean(P)), float(np.std(P))
    return row


def curve_from_trajectories(trajectories: np.ndarray, dataset: PairedDataset,
                            eps_denominator: float = EPS_DEN,
                            max_val: float | None = None) -> list[CurveRow]:
    """Rows for ``t = 1..T`` from precomputed states ``trajectories[t-1, i, j, :] = y_t(x_ij)``."""
    traj = np.asarray(trajectories, dtype=np.float64)
    if traj.ndim != 4 or traj.shape[1:3] != dataset.x.shape[:2]:
        raise ValueError("trajectories must be (T, N, J+1, dy)")
    return [_row_from_outputs(t + 1, dataset, traj[t], eps_denominator, max_val)
            for t in range(traj.shape[0])]


def curve(model: Callable[[np.ndarray, int], Sequence[np.ndarray]], dataset: PairedDataset, T: int,
          eps_denominator: float = EPS_DEN, max_val: float | None = None,
          batched: bool = False) -> list[CurveRow]:
    """Evaluate ``model(x, T) -> [y_1, ..., y_T]`` once per input and build ``T`` rows.

    With ``batched=True`` the model receives the whole ``(N*(J+1), dx)`` input
    array and returns ``T`` arrays of shape ``(N*(J+1), dy)``.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    N, J1 = dataset.x.shape[:2]
    if batched:
        ys = model(dataset.x.reshape(N * J1, -1), T)
        traj = np.stack([np.asarray(y, dtype=np.float64).reshape(N, J1, -1) for y in ys[:T]])
    else:
        per = []
        for i in range(N):
            for j in range(J1):
                try:
                    ys = model(dataset.x[i, j], T)
                except ArithmeticError as exc:
                    raise FloatingPointError(f"model failed at sample (i={i}, j={j}): {exc}") from exc
                except Exception as exc:
                    raise RuntimeError(f"model failed at sample (i={i}, j={j}): {exc}") from exc
                if len(ys) < T:
                    raise ValueError(f"model returned {len(ys)} iterates for T={T} at (i={i}, j={j})")
                per.append(np.stack([np.atleast_1d(np.asarray(y, dtype=np.float64)) for y in ys[:T]]))
        traj = np.stack(per, axis=1).reshape(T, N, J1, -1)
    return curve_from_trajectories(traj, dataset, eps_denominator, max_val)


def curve_header(labels: Sequence[str], with_psnr: bool = False) -> list[str]:
    head = ["t"] + [f"L_t_{lab}" for lab in labels] + ["E_mean", "E_std"]
    return head + (["P_mean", "P_std"] if with_psnr else [])


def write_curve_csv(path, rows: Sequence[CurveRow], labels: Sequence[str]) -> None:
    with_psnr = bool(rows) and rows[0].P_mean is not None
    out = []
    for r in rows:
        vals = [str(r.t), *r.L, r.E_mean, r.E_std]
        if with_psnr:
            vals += [r.P_mean, r.P_std]
        out.append(vals)
    write_csv(path, curve_header(labels, with_psnr), out)
