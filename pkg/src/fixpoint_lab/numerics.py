"""Deterministic linear algebra, seeded sampling and Adam.

Vectors and matrices are plain float64 numpy arrays. Everything here is a pure
function of its inputs (plus the explicit ``Rng`` state), so repeated calls are
bit-identical.

The generator is splitmix64: a Weyl-sequence state update
(``state += 0x9E3779B97F4A7C15``) whose value is passed through the
xorshift-multiply finalizer ``z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
z ^= z >> 27; z *= 0x94D049BB133111EB; z ^= z >> 31``. Uniform floats take the
top 53 bits; normals use the cosine branch of Box-Muller on two uniforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _finalize(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class Rng:
    """splitmix64 stream. Single owner; never share between threads."""

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK64

    def next_u64(self, size: int) -> np.ndarray:
        steps = np.arange(1, size + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * _GOLDEN
        self.state = (self.state + size * int(_GOLDEN)) & _MASK64
        return _finalize(z)

    def random(self, size: int | None = None):
        """Uniform on [0, 1) with 53-bit resolution."""
        n = 1 if size is None else int(size)
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return float(u[0]) if size is None else u

    def uniform(self, lo: float, hi: float, size: int | None = None):
        if not lo < hi:
            raise ValueError(f"uniform needs lo < hi, got [{lo}, {hi})")
        u = np.atleast_1d(self.random(1 if size is None else size))
        out = lo + (hi - lo) * u
        # rounding of lo + (hi-lo)*u can land on hi
        out = np.where(out >= hi, np.nextafter(hi, lo), out)
        return float(out[0]) if size is None else out

    def normal(self, mean: float = 0.0, std: float = 1.0, size: int | None = None):
        if std < 0:
            raise ValueError(f"std must be nonnegative, got {std}")
        n = 1 if size is None else int(size)
        u = self.random(2 * n).reshape(n, 2)
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        z = radius * np.cos(2.0 * np.pi * u[:, 1])
        out = mean + std * z
        return float(out[0]) if size is None else out

    def bernoulli(self, p: float, size: int) -> np.ndarray:
        return self.random(size) < p

    def sample_without_replacement(self, population: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(population)`` via partial Fisher-Yates."""
        if not 0 <= k <= population:
            raise ValueError(f"cannot draw {k} of {population}")
        pool = np.arange(population)
        u = self.random(k) if k else np.empty(0)
        for i in range(k):
            j = i + int(u[i] * (population - i))
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k].copy()

    def derive(self, *keys: int) -> "Rng":
        """Independent child stream keyed by integers; does not advance self."""
        z = np.array([self.state], dtype=np.uint64)
        for key in keys:
            with np.errstate(over="ignore"):
                z = _finalize((z ^ np.uint64(int(key) & _MASK64)) + _GOLDEN)
        return Rng(int(z[0]))


def sample_uniform(rng: Rng, lo: float, hi: float) -> float:
    return rng.uniform(lo, hi)


def sample_normal(rng: Rng, mean: float, std: float) -> float:
    return rng.normal(mean, std)


def gemv(A: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Row-by-row dot products, each summed strictly left to right.

    ``np.add.accumulate`` is a sequential scan, so the last column of the
    running sum is the naive loop result bit for bit (BLAS may reorder).
    """
    A = np.asarray(A, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if A.ndim != 2 or x.ndim != 1 or A.shape[1] != x.shape[0]:
        raise ValueError(f"gemv shape mismatch: A{A.shape} x{x.shape}")
    if A.shape[1] == 0:
        return np.zeros(A.shape[0])
    return np.add.accumulate(A * x, axis=1)[:, -1].copy()


def glorot_uniform(rng: Rng, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, fan_out * fan_in).reshape(fan_out, fan_in)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def zeros(cls, size: int, lr: float = 1e-3, **kw) -> "AdamState":
        return cls(m=np.zeros(size), v=np.zeros(size), lr=lr, **kw)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Bias-corrected Adam update of ``params`` in place; returns ``params``.

    ``lr == 0`` is allowed and leaves the parameters untouched.
    """
    if not (params.shape == grad.shape == state.m.shape == state.v.shape):
        raise ValueError("adam_step: params, grad and moments must share shape")
    if state.lr < 0 or not (0 <= state.beta1 < 1 and 0 <= state.beta2 < 1):
        raise ValueError("adam_step: need lr >= 0 and betas in [0, 1)")
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        raise FloatingPointError(f"non-finite gradient entry at index {int(bad[0])}")
    state.step += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grad
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    params -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params
