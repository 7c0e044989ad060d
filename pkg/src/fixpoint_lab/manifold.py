"""Exact proximal maps on a sphere and the PGD / HQS operators built from them.

For a sphere ``M`` with centre ``c`` and radius ``tau`` (its reach),

    p(z)       = c + tau (z - c) / ||z - c||
    prox_s(z)  = argmin_y  s/2 dist(y, M)^2 + 1/2 ||y - z||^2 = (z + s p(z)) / (1 + s)
    S_s(z)     = prox_s(z) - z = s/(1+s) (p(z) - z)

Inverse problem ``x = A y* + n`` with ``y* in M``:

    PGD:  y+ = prox_{gamma alpha}(y - gamma A^T (A y - x))
    HQS:  y  = (A^T A + beta I)^{-1} (A^T x + beta z),   z+ = prox_{alpha/beta}(y)

All maps accept a single vector or a stack of row vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .fixpoint import iterate_exactly
from .harness import CurveRow, PairedDataset, curve_from_trajectories
from .numerics import Rng


@dataclass(frozen=True)
class SphereManifold:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        if not self.radius > 0:
            raise ValueError("radius must be > 0")

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def reach(self) -> float:
        return self.radius

    def _offset(self, z) -> tuple[np.ndarray, np.ndarray]:
        d = np.asarray(z, dtype=np.float64) - self.center
        rho = np.linalg.norm(d, axis=-1, keepdims=True)
        if np.any(rho == 0):
            raise ValueError("projection is undefined at the sphere centre")
        return d, rho

    def project(self, z) -> np.ndarray:
        d, rho = self._offset(z)
        return self.center + self.radius * d / rho

    def dist(self, z) -> np.ndarray:
        d = np.asarray(z, dtype=np.float64) - self.center
        return np.abs(np.linalg.norm(d, axis=-1) - self.radius)

    def prox(self, z, sigma: float) -> np.ndarray:
        if not sigma > 0:
            raise ValueError("sigma must be > 0")
        z = np.asarray(z, dtype=np.float64)
        return (z + sigma * self.project(z)) / (1.0 + sigma)

    def prox_residual(self, z, sigma: float) -> np.ndarray:
        return self.prox(z, sigma) - np.asarray(z, dtype=np.float64)

    def tangent_basis(self, p: np.ndarray) -> np.ndarray:
        """Orthonormal rows spanning the tangent space at ``p`` (``dim - 1`` of them)."""
        nrm = (p - self.center) / np.linalg.norm(p - self.center)
        q, _ = np.linalg.qr(np.column_stack([nrm, np.eye(self.dim)]))
        basis = q[:, 1:self.dim].T
        return basis

    def sample_cap(self, rng: Rng, k: int, axis: np.ndarray, max_angle: float) -> np.ndarray:
        """``k`` points uniform in area on the cap within ``max_angle`` of ``axis`` (3-D only)."""
        if self.dim != 3:
            raise ValueError("cap sampling is implemented for spheres in R^3")
        axis = np.asarray(axis, dtype=np.float64) / np.linalg.norm(axis)
        cos_min = np.cos(max_angle)
        h = rng.uniform(cos_min, 1.0, k)
        phi = rng.uniform(0.0, 2 * np.pi, k)
        e1, e2 = self.tangent_basis(self.center + axis)
        s = np.sqrt(np.maximum(1.0 - h * h, 0.0))
        dirs = h[:, None] * axis + s[:, None] * (np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2)
        return self.center + self.radius * dirs

    def sample_tube(self, rng: Rng, k: int, r: float) -> np.ndarray:
        """Points whose distance to the sphere is at most ``r``."""
        g = rng.normal(0.0, 1.0, k * self.dim).reshape(k, self.dim)
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        rho = rng.uniform(self.radius - r, self.radius + r, k)
        return self.center + rho[:, None] * g


def prox_residual_lipschitz(M: SphereManifold, sigma: float, tube_r: float, n_pairs: int, rng: Rng,
                            max_sep: float | None = None) -> float:
    """Largest sampled ``||S(z) - S(z')|| / ||z - z'||`` over tube pairs at separation ``<= tau/4``.

    Half of the pairs are radial (along the normal, where the bound is attained),
    half are uniformly random within the separation ball.
    """
    tau = M.reach
    if tube_r > tau / 4:
        raise ValueError("tube radius must be <= tau/4")
    max_sep = tau / 4 if max_sep is None else max_sep
    if max_sep > tau / 4:
        raise ValueError("pair separation must be <= tau/4")
    z = M.sample_tube(rng, n_pairs, tube_r)
    d = rng.normal(0.0, 1.0, n_pairs * M.dim).reshape(n_pairs, M.dim)
    radial = np.arange(n_pairs) % 2 == 0
    d[radial] = (z - M.center)[radial]
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    step = max_sep * rng.random(n_pairs)
    z2 = z + step[:, None] * d
    # keep the partner inside the tube by pulling it back along the same direction
    over = M.dist(z2) > tube_r
    while np.any(over):
        step[over] *= 0.5
        z2[over] = z[over] + step[over, None] * d[over]
        over = M.dist(z2) > tube_r
    sep = np.linalg.norm(z2 - z, axis=1)
    ok = sep > 0
    num = np.linalg.norm(M.prox_residual(z[ok], sigma) - M.prox_residual(z2[ok], sigma), axis=1)
    return float(np.max(num / sep[ok]))


@dataclass
class InverseProblem:
    A: np.ndarray
    x: np.ndarray | None = None
    alpha: float = 2.0
    beta: float = 1.0
    gamma: float = 0.5
    _chol: tuple = field(init=False, repr=False)

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        if self.x is not None:
            self.x = np.asarray(self.x, dtype=np.float64)
        for name in ("alpha", "beta", "gamma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if not self.gamma * self.sigma_max**2 < 2:
            raise ValueError("gamma * sigma_max^2 must be < 2")
        H = self.A.T @ self.A + self.beta * np.eye(self.A.shape[1])
        self._chol = scipy.linalg.cho_factor(H)

    @property
    def sigma_max(self) -> float:
        return float(np.linalg.norm(self.A, 2))

    @property
    def pgd_sigma(self) -> float:
        return self.gamma * self.alpha

    @property
    def hqs_sigma(self) -> float:
        return self.alpha / self.beta

    def with_x(self, x) -> "InverseProblem":
        return InverseProblem(self.A, x, self.alpha, self.beta, self.gamma)

    def _x(self, x):
        x = self.x if x is None else np.asarray(x, dtype=np.float64)
        if x is None:
            raise ValueError("no observation given")
        return x

    def hqs_y(self, z, x=None) -> np.ndarray:
        """The quadratic block ``(A^T A + beta I)^{-1} (A^T x + beta z)``."""
        rhs = self._x(x) @ self.A + self.beta * np.asarray(z, dtype=np.float64)
        return scipy.linalg.cho_solve(self._chol, rhs.T).T


def pgd_op(prob: InverseProblem, M: SphereManifold, y, x=None) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    x = prob._x(x)
    v = y - prob.gamma * ((y @ prob.A.T - x) @ prob.A)
    return M.prox(v, prob.pgd_sigma)


def hqs_op(prob: InverseProblem, M: SphereManifold, z, x=None) -> np.ndarray:
    return M.prox(prob.hqs_y(z, x), prob.hqs_sigma)


def objective_pgd(prob: InverseProblem, M: SphereManifold, y, x=None) -> np.ndarray:
    """``1/2 ||A y - x||^2 + alpha/2 dist(y, M)^2``."""
    r = np.asarray(y) @ prob.A.T - prob._x(x)
    return 0.5 * np.sum(r * r, axis=-1) + 0.5 * prob.alpha * M.dist(y) ** 2


def objective_hqs(prob: InverseProblem, M: SphereManifold, y, z, x=None) -> np.ndarray:
    """``1/2 ||A y - x||^2 + alpha/2 dist(z, M)^2 + beta/2 ||y - z||^2``."""
    r = np.asarray(y) @ prob.A.T - prob._x(x)
    dz = np.asarray(y) - np.asarray(z)
    return (0.5 * np.sum(r * r, axis=-1) + 0.5 * prob.alpha * M.dist(z) ** 2
            + 0.5 * prob.beta * np.sum(dz * dz, axis=-1))


def stationarity_pgd(prob: InverseProblem, M: SphereManifold, y, x=None) -> float:
    """Norm of ``A^T (A y - x) + alpha (y - p(y))``."""
    y = np.asarray(y, dtype=np.float64)
    g = (y @ prob.A.T - prob._x(x)) @ prob.A + prob.alpha * (y - M.project(y))
    return float(np.max(np.linalg.norm(np.atleast_2d(g), axis=-1)))


def stationarity_hqs(prob: InverseProblem, M: SphereManifold, y, z, x=None) -> tuple[float, float]:
    """Norms of the y-block and z-block gradients of the splitting objective."""
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    gy = (y @ prob.A.T - prob._x(x)) @ prob.A + prob.beta * (y - z)
    gz = prob.alpha * (z - M.project(z)) + prob.beta * (z - y)
    nrm = lambda g: float(np.max(np.linalg.norm(np.atleast_2d(g), axis=-1)))
    return nrm(gy), nrm(gz)


def bilipschitz_constants(A: np.ndarray, points: np.ndarray, n_pairs: int, rng: Rng) -> tuple[float, float]:
    """Sampled ``(mu, L)``: min and max of ``||A(p - q)|| / ||p - q||`` over point pairs."""
    k = points.shape[0]
    i = (rng.random(n_pairs) * k).astype(np.int64)
    j = (rng.random(n_pairs) * k).astype(np.int64)
    d = points[i] - points[j]
    n = np.linalg.norm(d, axis=1)
    ok = n > 0
    r = np.linalg.norm(d[ok] @ A.T, axis=1) / n[ok]
    return float(r.min()), float(r.max())


def noise_bound(mu: float, L: float, sigma_max: float, tau: float) -> float:
    """Admissible observation-noise radius ``mu^5 tau / (80 sigma_max^2 L^2)``."""
    return mu**5 * tau / (80.0 * sigma_max**2 * L**2)


# -- Lipschitz growth experiment ------------------------------------------------------

@dataclass
class ManifoldExperimentConfig:
    n_samples: int = 200
    n_modes: int = 5
    perturb: float = 1e-3
    T: int = 200
    method: str = "pgd"
    alpha: float = 2.0
    beta: float = 1.0
    gamma: float = 0.5
    center: list[float] = field(default_factory=lambda: [0.0, 0.0, -0.5])
    radius: float = 1.0
    forward: str = "projection"  # identity | gaussian | projection
    cap_angle: float = 1.45
    noise_fraction: float = 0.5
    bilip_pairs: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("pgd", "hqs"):
            raise ValueError("method must be 'pgd' or 'hqs'")
        if self.forward not in ("identity", "gaussian", "projection"):
            raise ValueError("forward must be identity, gaussian or projection")
        if self.n_samples < 1 or self.n_modes < 1 or self.T < 1:
            raise ValueError("n_samples, n_modes and T must be >= 1")
        if not self.perturb > 0:
            raise ValueError("perturb must be > 0")


@dataclass
class ManifoldExperimentResult:
    rows: list[CurveRow]
    labels: list[str]
    diagnostics: dict


def forward_operator(kind: str, n: int, rng: Rng) -> np.ndarray:
    if kind == "identity":
        return np.eye(n)
    if kind == "gaussian":
        G = rng.normal(0.0, 1.0, n * n).reshape(n, n) / np.sqrt(n)
        return G / np.linalg.norm(G, 2)
    return np.eye(n)[: n - 1]  # drop the last coordinate


def build_manifold_dataset(cfg: ManifoldExperimentConfig) -> tuple[PairedDataset, SphereManifold, InverseProblem, dict]:
    rng = Rng(cfg.seed)
    M = SphereManifold(np.array(cfg.center), cfg.radius)
    A = forward_operator(cfg.forward, M.dim, rng.derive(1))
    prob = InverseProblem(A, None, cfg.alpha, cfg.beta, cfg.gamma)
    axis = np.zeros(M.dim)
    axis[-1] = 1.0
    y_star = M.sample_cap(rng.derive(2), cfg.n_samples, axis, cfg.cap_angle)

    cap_pts = M.sample_cap(rng.derive(3), 2000, axis, cfg.cap_angle)
    mu, L = bilipschitz_constants(A, cap_pts, cfg.bilip_pairs, rng.derive(4))
    bound = noise_bound(mu, L, prob.sigma_max, M.reach)
    level = cfg.noise_fraction * bound
    noise = rng.derive(5).normal(0.0, 1.0, cfg.n_samples * A.shape[0]).reshape(cfg.n_samples, -1)
    noise *= level / np.linalg.norm(noise, axis=1, keepdims=True)

    angles = np.pi * np.arange(cfg.n_modes) / cfg.n_modes
    ys = np.empty((cfg.n_samples, cfg.n_modes + 1, M.dim))
    ys[:, 0] = y_star
    for i in range(cfg.n_samples):
        e1, e2 = M.tangent_basis(y_star[i])[:2]
        for j, a in enumerate(angles, start=1):
            ys[i, j] = M.project(y_star[i] + cfg.perturb * (np.cos(a) * e1 + np.sin(a) * e2))
    # the same noise vector is reused for every perturbed partner of sample i
    xs = ys @ A.T + noise[:, None, :]
    labels = [f"tangent{j}" for j in range(1, cfg.n_modes + 1)]
    diag = {"mu": mu, "L": L, "sigma_max": prob.sigma_max, "noise_bound": bound, "noise_level": level,
            "tau": M.reach}
    return PairedDataset(xs, ys, labels), M, prob, diag


def run_trajectories(cfg: ManifoldExperimentConfig, ds: PairedDataset, M: SphereManifold,
                     prob: InverseProblem) -> np.ndarray:
    """``(T, N, J+1, n)`` estimates ``y_t`` from ``y_0 = 0`` for every dataset input."""
    N, J1, dx = ds.x.shape
    X = ds.x.reshape(N * J1, dx)
    y0 = np.zeros((N * J1, M.dim))
    if cfg.method == "pgd":
        traj = iterate_exactly(lambda y, x: pgd_op(prob, M, y, x), X, y0, cfg.T)[1:]
    else:
        traj = [prob.hqs_y(z, X) for z in iterate_exactly(lambda z, x: hqs_op(prob, M, z, x), X, y0, cfg.T)[1:]]
    return np.stack(traj).reshape(cfg.T, N, J1, M.dim)


def lipschitz_growth_experiment(cfg: ManifoldExperimentConfig) -> ManifoldExperimentResult:
    ds, M, prob, diag = build_manifold_dataset(cfg)
    traj = run_trajectories(cfg, ds, M, prob)
    rows = curve_from_trajectories(traj, ds)
    diag = dict(diag, method=cfg.method, sigma=prob.pgd_sigma if cfg.method == "pgd" else prob.hqs_sigma)
    return ManifoldExperimentResult(rows, ds.j_labels, diag)
