"""Implicit bipartite GNN for linear programs, its explicit baseline, and training.

Constraint nodes ``W_i`` carry ``(b_i, circ_i)``, variable nodes ``V_j`` carry
``(c_j, l_j, u_j)`` and, in implicit mode, the scalar state ``z_j``. One
application of the core map is::

    W0 = phi1(b, circ)                 V0 = phi2(c, l, u, z)
    W^l = th1_l([W^{l-1}, S  th2_l(V^{l-1})])      l = 1..L-1
    V^l = th3_l([V^{l-1}, S^T th4_l(W^{l-1})])
    z_out = th5(V^{L-1})

with ``S_ij = A_ij``. Implicit mode iterates ``z_t = G(z_{t-1})`` from ``z_0 = 0``
and reads out ``y = psi(z)`` per coordinate. Explicit mode drops ``z`` from
``phi2`` and takes ``th5``'s output as ``y`` after a single pass.

Many graphs are processed at once as one disjoint union; neighbour sums are
CSR products whose per-row accumulation runs in ascending column order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .harness import relative_error
from .lp import LE, LpInstance
from .nn import Mlp2, MlpGrad, Tape, flatten, load_params, mlp_backward, mlp_forward, save_params, unflatten_into
from .numerics import AdamState, Rng, adam_step

IMPLICIT, EXPLICIT = "implicit", "explicit"


class NotConverged(RuntimeError):
    pass


# -- graphs ---------------------------------------------------------------------

@dataclass
class LpGraph:
    n_var: int
    n_con: int
    var_feats: np.ndarray  # (n_var, 3): c, l, u
    con_feats: np.ndarray  # (n_con, 2): b, circ (eq -> 0, le -> 1)
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    var_splits: list[int] = field(default_factory=list)  # start offsets of each member graph
    S: sp.csr_matrix = field(init=False, repr=False)
    ST: sp.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        self.S = sp.csr_matrix((self.vals, (self.rows, self.cols)), shape=(self.n_con, self.n_var))
        self.S.sort_indices()
        self.ST = sp.csr_matrix(self.S.T)
        self.ST.sort_indices()
        if not self.var_splits:
            self.var_splits = [0]

    @property
    def n_edges(self) -> int:
        return int(self.vals.size)

    def split(self, v: np.ndarray) -> list[np.ndarray]:
        return np.split(v, self.var_splits[1:])


def encode_graph(inst: LpInstance) -> LpGraph:
    var = np.stack([inst.c, inst.l, inst.u], axis=1)
    con = np.stack([inst.b, np.array([1.0 if t == LE else 0.0 for t in inst.circ])], axis=1)
    return LpGraph(inst.n, inst.m, var, con, inst.rows.copy(), inst.cols.copy(), inst.vals.copy())


def batch_graphs(graphs: Sequence[LpGraph]) -> LpGraph:
    if len(graphs) == 1:
        return graphs[0]
    vo = np.cumsum([0] + [g.n_var for g in graphs])
    co = np.cumsum([0] + [g.n_con for g in graphs])
    return LpGraph(
        int(vo[-1]), int(co[-1]),
        np.concatenate([g.var_feats for g in graphs]),
        np.concatenate([g.con_feats for g in graphs]),
        np.concatenate([g.rows + co[k] for k, g in enumerate(graphs)]),
        np.concatenate([g.cols + vo[k] for k, g in enumerate(graphs)]),
        np.concatenate([g.vals for g in graphs]),
        [int(v) for v in vo[:-1]],
    )


# -- parameters -----------------------------------------------------------------

@dataclass
class GnnParams:
    mode: str
    emb: int
    layers: int
    mlps: dict[str, Mlp2]

    @classmethod
    def init(cls, rng: Rng, emb: int = 8, layers: int = 3, mode: str = IMPLICIT) -> "GnnParams":
        if layers < 2:
            raise ValueError("layers must be >= 2")
        if mode not in (IMPLICIT, EXPLICIT):
            raise ValueError(f"unknown mode {mode!r}")
        e = emb
        spec = [("phi1", 2, e), ("phi2", 4 if mode == IMPLICIT else 3, e)]
        for l in range(1, layers):
            spec += [(f"theta1_{l}", 2 * e, e), (f"theta2_{l}", e, e),
                     (f"theta3_{l}", 2 * e, e), (f"theta4_{l}", e, e)]
        spec.append(("theta5", e, 1))
        if mode == IMPLICIT:
            spec.append(("psi", 1, 1))
        mlps = {}
        for name, n_in, n_out in spec:
            mlps[name] = Mlp2.init(rng.derive(sum(map(ord, name)), len(mlps)), n_in, e, n_out)
        return cls(mode, emb, layers, mlps)

    def names(self) -> list[str]:
        return list(self.mlps)

    def arrays(self) -> list[np.ndarray]:
        return [a for m in self.mlps.values() for a in m.arrays()]

    def array_names(self) -> list[str]:
        return [f"{k}.{p}" for k in self.mlps for p in ("W1", "b1", "W2", "b2")]

    def flat(self) -> np.ndarray:
        return flatten(self.arrays())

    def set_flat(self, v: np.ndarray) -> None:
        unflatten_into(self.arrays(), v)

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays())

    def copy(self) -> "GnnParams":
        return GnnParams(self.mode, self.emb, self.layers, {k: m.copy() for k, m in self.mlps.items()})

    def zero_grads(self) -> dict[str, MlpGrad]:
        return {k: MlpGrad(*(np.zeros_like(a) for a in m.arrays())) for k, m in self.mlps.items()}

    def save(self, stem) -> None:
        save_params(stem, self.array_names(), self.arrays(),
                    {"mode": self.mode, "emb": self.emb, "layers": self.layers})

    @classmethod
    def load(cls, stem) -> "GnnParams":
        man, arrays = load_params(stem)
        p = cls.init(Rng(0), man.meta["emb"], man.meta["layers"], man.meta["mode"])
        if man.names != p.array_names():
            raise ValueError("checkpoint layout does not match the declared architecture")
        for dst, src in zip(p.arrays(), arrays):
            dst[...] = src
        return p


def grads_flat(params: GnnParams, grads: dict[str, MlpGrad]) -> np.ndarray:
    return flatten([a for k in params.mlps for a in grads[k].arrays()])


def _acc(grads: dict[str, MlpGrad], name: str, g: MlpGrad) -> None:
    for dst, src in zip(grads[name].arrays(), g.arrays()):
        dst += src


# -- one application of the core map ---------------------------------------------

@dataclass
class GnnTape:
    tapes: dict[str, Tape]
    used: bool = False


def gnn_forward(params: GnnParams, z_in: np.ndarray | None, graph: LpGraph) -> tuple[np.ndarray, GnnTape]:
    """Core map with tape. ``z_in`` is ignored (must be None) in explicit mode."""
    P, tapes = params.mlps, {}

    def run(name, x):
        y, tapes[name] = mlp_forward(P[name], x)
        return y

    if params.mode == IMPLICIT:
        z_in = np.asarray(z_in, dtype=np.float64)
        if z_in.shape != (graph.n_var,):
            raise ValueError(f"z_in has shape {z_in.shape}, expected ({graph.n_var},)")
        v_in = np.column_stack([graph.var_feats, z_in])
    else:
        v_in = graph.var_feats
    W = run("phi1", graph.con_feats)
    V = run("phi2", v_in)
    for l in range(1, params.layers):
        agg_w = graph.S @ run(f"theta2_{l}", V)
        agg_v = graph.ST @ run(f"theta4_{l}", W)
        W, V = run(f"theta1_{l}", np.hstack([W, agg_w])), run(f"theta3_{l}", np.hstack([V, agg_v]))
    out = run("theta5", V)[:, 0]
    return out, GnnTape(tapes)


def gnn_apply(params: GnnParams, z_in: np.ndarray, graph: LpGraph) -> np.ndarray:
    return gnn_forward(params, z_in, graph)[0]


def gnn_backward(params: GnnParams, tape: GnnTape, graph: LpGraph, d_out: np.ndarray,
                 grads: dict[str, MlpGrad]) -> np.ndarray | None:
    """Accumulate parameter gradients into ``grads``; return ``d z_in`` (None in explicit mode)."""
    if tape.used:
        raise RuntimeError("GNN tape already consumed")
    tape.used = True
    P, T = params.mlps, tape.tapes
    e = params.emb

    def back(name, dy):
        g, dx = mlp_backward(P[name], T[name], dy)
        _acc(grads, name, g)
        return dx

    dV = back("theta5", np.asarray(d_out, dtype=np.float64)[:, None])
    dW = np.zeros((graph.n_con, e))
    for l in range(params.layers - 1, 0, -1):
        d3 = back(f"theta3_{l}", dV)
        d1 = back(f"theta1_{l}", dW)
        d_m4 = graph.S @ d3[:, e:]
        d_m2 = graph.ST @ d1[:, e:]
        dW = d1[:, :e] + back(f"theta4_{l}", d_m4)
        dV = d3[:, :e] + back(f"theta2_{l}", d_m2)
    back("phi1", dW)
    dv_in = back("phi2", dV)
    return dv_in[:, 3].copy() if params.mode == IMPLICIT else None


def readout(params: GnnParams, z: np.ndarray) -> tuple[np.ndarray, Tape]:
    y, tape = mlp_forward(params.mlps["psi"], z[:, None])
    return y[:, 0], tape


# -- unrolled model ----------------------------------------------------------------

@dataclass
class UnrolledTape:
    steps: list[GnnTape]
    psi: Tape | None
    used: bool = False


def unrolled_forward(params: GnnParams, graph: LpGraph, T: int,
                     keep_all: bool = False) -> tuple[np.ndarray, UnrolledTape, list[np.ndarray]]:
    """``z_0 = 0``, ``T`` core applications, readout. Returns ``(y_T, tape, [y_1..y_T] if keep_all)``."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if params.mode == EXPLICIT:
        y, tape = gnn_forward(params, None, graph)
        return y, UnrolledTape([tape], None), ([y] * T if keep_all else [])
    z = np.zeros(graph.n_var)
    steps, ys = [], []
    for t in range(1, T + 1):
        z, tape = gnn_forward(params, z, graph)
        if not np.all(np.isfinite(z)):
            raise FloatingPointError(f"non-finite GNN state at t={t}")
        steps.append(tape)
        if keep_all and t < T:
            ys.append(readout(params, z)[0])
    y, psi_tape = readout(params, z)
    if keep_all:
        ys.append(y)
    return y, UnrolledTape(steps, psi_tape), ys


def unrolled_backward(params: GnnParams, tape: UnrolledTape, graph: LpGraph, dy: np.ndarray) -> np.ndarray:
    """Reverse accumulation through all steps; gradients of shared weights are summed over t."""
    if tape.used:
        raise RuntimeError("unrolled tape already consumed")
    tape.used = True
    grads = params.zero_grads()
    if params.mode == EXPLICIT:
        gnn_backward(params, tape.steps[0], graph, dy, grads)
        return grads_flat(params, grads)
    g, dz = mlp_backward(params.mlps["psi"], tape.psi, np.asarray(dy, dtype=np.float64)[:, None])
    _acc(grads, "psi", g)
    dz = dz[:, 0]
    for step in reversed(tape.steps):
        dz = gnn_backward(params, step, graph, dz, grads)
    return grads_flat(params, grads)


def predict(params: GnnParams, graph: LpGraph, T: int) -> np.ndarray:
    return unrolled_forward(params, graph, T)[0]


def mse_loss(y: np.ndarray, y_star: np.ndarray) -> tuple[float, np.ndarray]:
    r = y - y_star
    return float(np.mean(r * r)), 2.0 * r / r.size


# -- implicit gradient via Neumann series --------------------------------------------

def neumann_series(vjp: Callable[[np.ndarray], np.ndarray], g: np.ndarray, K: int) -> np.ndarray:
    """``sum_{k=0}^K (J^T)^k g`` given ``vjp(u) = J^T u``."""
    if K < 0:
        raise ValueError("K must be >= 0")
    term = np.array(g, dtype=np.float64)
    total = term.copy()
    for _ in range(K):
        term = vjp(term)
        total += term
    return total


@dataclass
class AffineToy:
    """``G(z) = rho z + W x`` with loss ``||z* - y*||^2 / 2``; the exact implicit
    gradient is ``(1 - rho)^{-1} g x^T`` with ``g = z* - y*``."""

    W: np.ndarray
    x: np.ndarray
    y_star: np.ndarray
    rho: float = 0.5

    def fixed_point(self) -> np.ndarray:
        return self.W @ self.x / (1.0 - self.rho)

    def exact_gradient(self) -> np.ndarray:
        g = self.fixed_point() - self.y_star
        return np.outer(g, self.x) / (1.0 - self.rho)

    def neumann_gradient(self, K: int) -> np.ndarray:
        g = self.fixed_point() - self.y_star
        v = neumann_series(lambda u: self.rho * u, g, K)
        return np.outer(v, self.x)


def solve_fixed_point(params: GnnParams, graph: LpGraph, tol: float = 1e-9,
                      max_iter: int = 10_000) -> tuple[np.ndarray, float]:
    z = np.zeros(graph.n_var)
    for _ in range(max_iter):
        z_new = gnn_apply(params, z, graph)
        r = float(np.linalg.norm(z_new - z))
        z = z_new
        if r <= tol:
            return z, r
    raise NotConverged(f"core map residual {r:.3g} > {tol:g} after {max_iter} iterations")


def neumann_gradient(params: GnnParams, graph: LpGraph, y_star: np.ndarray, K: int,
                     tol: float = 1e-9, max_iter: int = 10_000) -> np.ndarray:
    """MSE gradient at the fixed point with the inverse ``(I - J^T)^{-1}`` replaced by ``K`` Neumann terms."""
    if params.mode != IMPLICIT:
        raise ValueError("Neumann gradient needs the implicit model")
    z_star, _ = solve_fixed_point(params, graph, tol, max_iter)
    grads = params.zero_grads()
    y, psi_tape = readout(params, z_star)
    _, dy = mse_loss(y, y_star)
    g, dz = mlp_backward(params.mlps["psi"], psi_tape, dy[:, None])
    _acc(grads, "psi", g)

    def vjp(u):
        _, tape = gnn_forward(params, z_star, graph)
        return gnn_backward(params, tape, graph, u, params.zero_grads())

    v = neumann_series(vjp, dz[:, 0], K)
    _, tape = gnn_forward(params, z_star, graph)
    gnn_backward(params, tape, graph, v, grads)
    return grads_flat(params, grads)


# -- training ----------------------------------------------------------------------

@dataclass
class StageConfig:
    T: int
    lr: float
    epochs: int


@dataclass
class TrainConfig:
    emb: int = 8
    layers: int = 3
    mode: str = IMPLICIT
    stages: list[StageConfig] = field(default_factory=lambda: [StageConfig(3, 0.01, 100), StageConfig(6, 1e-4, 100)])
    batch_size: int = 0  # 0 means full batch
    seed: int = 0
    inference_T: int = 8

    def __post_init__(self):
        self.stages = [s if isinstance(s, StageConfig) else StageConfig(**s) for s in self.stages]
        if not self.stages:
            raise ValueError("at least one training stage is required")
        for s in self.stages:
            if s.T < 1 or s.lr < 0 or s.epochs < 0:
                raise ValueError(f"invalid stage {s}")
        if self.batch_size < 0:
            raise ValueError("batch_size must be >= 0")


@dataclass
class HistoryRow:
    epoch: int
    stage: int
    train_mse: float
    train_relerr: float


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, stage: int):
        super().__init__(f"loss became non-finite at epoch {epoch} (stage {stage})")
        self.epoch = epoch
        self.stage = stage


def mean_relative_error(y: np.ndarray, y_star: np.ndarray, graph: LpGraph) -> tuple[float, float]:
    errs = np.array([relative_error(a, b) for a, b in zip(graph.split(y), graph.split(y_star))])
    return float(np.mean(errs)), float(np.std(errs))


def train(graphs: Sequence[LpGraph], targets: Sequence[np.ndarray], cfg: TrainConfig,
          log: Callable[[HistoryRow], None] | None = None) -> tuple[GnnParams, list[HistoryRow]]:
    """Adam on the MSE of ``y_T`` against ``y*``, one stage after another.

    Stage ``k`` warm-starts from stage ``k-1``'s weights with fresh Adam moments.
    Minibatches come from a seeded permutation per epoch; gradients within a
    batch are reduced in instance order by the stacked sparse products.
    """
    if not graphs:
        raise ValueError("training set is empty")
    rng = Rng(cfg.seed)
    params = GnnParams.init(rng.derive(1), cfg.emb, cfg.layers, cfg.mode)
    N = len(graphs)
    bs = N if cfg.batch_size in (0, None) or cfg.batch_size >= N else cfg.batch_size
    full = batch_graphs(graphs)
    full_y = np.concatenate(targets)
    history: list[HistoryRow] = []
    epoch = 0
    flat = params.flat()
    for si, stage in enumerate(cfg.stages, start=1):
        state = AdamState.zeros(flat.size, lr=stage.lr)
        shuffler = rng.derive(2, si)
        cache: dict[tuple[int, ...], tuple[LpGraph, np.ndarray]] = {}
        for _ in range(stage.epochs):
            epoch += 1
            order = np.arange(N) if bs == N else shuffler.sample_without_replacement(N, N)
            for start in range(0, N, bs):
                idx = tuple(int(i) for i in order[start:start + bs])
                if bs == N:
                    g, yt = cache.setdefault(idx, (full, full_y))
                else:
                    g, yt = batch_graphs([graphs[i] for i in idx]), np.concatenate([targets[i] for i in idx])
                y, tape, _ = unrolled_forward(params, g, stage.T)
                loss, dy = mse_loss(y, yt)
                if not math.isfinite(loss):
                    raise TrainingDiverged(epoch, si)
                grad = unrolled_backward(params, tape, g, dy)
                if not np.all(np.isfinite(grad)):
                    raise TrainingDiverged(epoch, si)
                adam_step(state, flat, grad)
                params.set_flat(flat)
            y = predict(params, full, stage.T)
            mse, _ = mse_loss(y, full_y)
            if not math.isfinite(mse):
                raise TrainingDiverged(epoch, si)
            row = HistoryRow(epoch, si, mse, mean_relative_error(y, full_y, full)[0])
            history.append(row)
            if log:
                log(row)
    return params, history


def evaluate(params: GnnParams, graph: LpGraph, T_max: int) -> np.ndarray:
    """``(T_max, n_var)`` array whose row ``t-1`` is ``y_t`` for the (possibly batched) graph."""
    _, _, ys = unrolled_forward(params, graph, T_max, keep_all=True)
    return np.stack(ys)
