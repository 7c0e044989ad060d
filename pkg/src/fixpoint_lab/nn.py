"""Two-layer ReLU MLPs with hand-written reverse mode.

``mlp_forward`` accepts a single input vector or a batch of row vectors
``(B, in)``; batched calls return ``(B, out)`` and their backward sums
parameter gradients over rows in row order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .numerics import Rng, glorot_uniform


@dataclass
class Mlp2:
    W1: np.ndarray  # (hidden, in)
    b1: np.ndarray
    W2: np.ndarray  # (out, hidden)
    b2: np.ndarray

    def __post_init__(self):
        h, i = self.W1.shape
        o, h2 = self.W2.shape
        if h2 != h or self.b1.shape != (h,) or self.b2.shape != (o,):
            raise ValueError(f"inconsistent Mlp2 shapes W1{self.W1.shape} W2{self.W2.shape}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.W1.shape[1], self.W1.shape[0], self.W2.shape[0]

    @classmethod
    def init(cls, rng: Rng, n_in: int, n_hidden: int, n_out: int) -> "Mlp2":
        W1 = glorot_uniform(rng, n_hidden, n_in)
        W2 = glorot_uniform(rng, n_out, n_hidden)
        return cls(W1, np.zeros(n_hidden), W2, np.zeros(n_out))

    @classmethod
    def zeros(cls, n_in: int, n_hidden: int, n_out: int) -> "Mlp2":
        return cls(np.zeros((n_hidden, n_in)), np.zeros(n_hidden), np.zeros((n_out, n_hidden)), np.zeros(n_out))

    def arrays(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2]

    def copy(self) -> "Mlp2":
        return Mlp2(*(a.copy() for a in self.arrays()))


@dataclass
class Tape:
    x: np.ndarray
    pre: np.ndarray
    act: np.ndarray
    single: bool
    used: bool = False


@dataclass
class MlpGrad:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2]


def mlp_forward(mlp: Mlp2, x: np.ndarray) -> tuple[np.ndarray, Tape]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != mlp.W1.shape[1]:
        raise ValueError(f"input width {X.shape[-1]} != {mlp.W1.shape[1]}")
    pre = X @ mlp.W1.T + mlp.b1
    act = np.maximum(pre, 0.0)
    y = act @ mlp.W2.T + mlp.b2
    return (y[0] if single else y), Tape(X, pre, act, single)


def mlp_backward(mlp: Mlp2, tape: Tape, dy: np.ndarray) -> tuple[MlpGrad, np.ndarray]:
    if tape.used:
        raise RuntimeError("tape already consumed by a backward pass")
    tape.used = True
    dY = np.asarray(dy, dtype=np.float64)
    if tape.single:
        dY = dY[None, :]
    if dY.shape != (tape.x.shape[0], mlp.W2.shape[0]):
        raise ValueError(f"dy shape {dY.shape} does not match output")
    dW2 = dY.T @ tape.act
    db2 = dY.sum(axis=0)
    dact = dY @ mlp.W2
    dpre = np.where(tape.pre > 0, dact, 0.0)  # ReLU'(0) = 0
    dW1 = dpre.T @ tape.x
    db1 = dpre.sum(axis=0)
    dx = dpre @ mlp.W1
    return MlpGrad(dW1, db1, dW2, db2), (dx[0] if tape.single else dx)


def grad_check(f: Callable[[np.ndarray], float], grad: np.ndarray, params: np.ndarray, h: float = 1e-5) -> float:
    """Max entrywise ``|numeric - analytic| / (|analytic| + 1e-8)`` with central differences."""
    if not h > 0:
        raise ValueError("h must be > 0")
    p = np.array(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    worst = 0.0
    for k in range(p.size):
        keep = p[k]
        p[k] = keep + h
        fp = f(p)
        p[k] = keep - h
        fm = f(p)
        p[k] = keep
        num = (fp - fm) / (2 * h)
        worst = max(worst, abs(num - grad[k]) / (abs(grad[k]) + 1e-8))
    return worst


def numeric_gradient(f: Callable[[np.ndarray], float], params: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``f`` at ``params``."""
    if not h > 0:
        raise ValueError("h must be > 0")
    p = np.array(params, dtype=np.float64)
    out = np.empty_like(p)
    for k in range(p.size):
        keep = p[k]
        p[k] = keep + h
        fp = f(p)
        p[k] = keep - h
        fm = f(p)
        p[k] = keep
        out[k] = (fp - fm) / (2 * h)
    return out


def tensor_grad_check(f: Callable[[np.ndarray], float], grad: np.ndarray, params: np.ndarray,
                      sizes: Sequence[int], h: float = 1e-5) -> float:
    """Max over parameter tensors of ``||numeric - analytic|| / (||analytic|| + 1e-8)``.

    Normwise per tensor, so entries far below the finite-difference noise floor
    do not dominate the way they do in :func:`grad_check`.
    """
    num = numeric_gradient(f, params, h)
    grad = np.asarray(grad, dtype=np.float64)
    if sum(sizes) != grad.size:
        raise ValueError("tensor sizes do not cover the gradient")
    worst, k = 0.0, 0
    for n in sizes:
        sl = slice(k, k + n)
        k += n
        worst = max(worst, float(np.linalg.norm(num[sl] - grad[sl]) / (np.linalg.norm(grad[sl]) + 1e-8)))
    return worst


# -- flat parameter vectors ------------------------------------------------

def flatten(arrays: list[np.ndarray]) -> np.ndarray:
    return np.concatenate([a.ravel() for a in arrays]) if arrays else np.zeros(0)


def unflatten_into(arrays: list[np.ndarray], flat: np.ndarray) -> None:
    k = 0
    for a in arrays:
        a[...] = flat[k:k + a.size].reshape(a.shape)
        k += a.size
    if k != flat.size:
        raise ValueError(f"flat vector has {flat.size} entries, expected {k}")


@dataclass
class ParamManifest:
    names: list[str]
    shapes: list[list[int]]
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return int(sum(int(np.prod(s)) for s in self.shapes))


def save_params(path_stem, names: list[str], arrays: list[np.ndarray], meta: dict | None = None) -> None:
    """Write ``<stem>.json`` (shape manifest) and ``<stem>.bin`` (little-endian float64)."""
    stem = Path(path_stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    manifest = {"names": names, "shapes": [list(a.shape) for a in arrays], "dtype": "<f8",
                "meta": meta or {}}
    with open(stem.with_suffix(".json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    flatten(arrays).astype("<f8").tofile(stem.with_suffix(".bin"))


def load_params(path_stem) -> tuple[ParamManifest, list[np.ndarray]]:
    stem = Path(path_stem)
    with open(stem.with_suffix(".json")) as fh:
        man = json.load(fh)
    flat = np.fromfile(stem.with_suffix(".bin"), dtype="<f8").astype(np.float64)
    manifest = ParamManifest(man["names"], man["shapes"], man.get("meta", {}))
    if flat.size != manifest.size:
        raise ValueError(f"parameter file has {flat.size} values, manifest expects {manifest.size}")
    arrays = [np.zeros(s) for s in manifest.shapes]
    unflatten_into(arrays, flat)
    return manifest, arrays
