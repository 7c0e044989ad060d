"""Linear programs: generation, standard form, revised simplex, KKT and regularity checks.

General form (``circ_i`` is ``eq`` or ``le``)::

    min c^T y   s.t.  (A y)_i circ_i b_i,   l <= y <= u

Standard form uses ``yh = y - l``, ``s = b_q - A_q y`` (one slack per ``le``
row) and ``t = u - y``::

    [A_p  0  0] [yh]   [b_p - A_p l]
    [A_q  I  0] [s ] = [b_q - A_q l]        yh, s, t >= 0,  cost [c; 0; 0]
    [I    0  I] [t ]   [u - l      ]

with equality rows first, then inequality rows, then bound rows.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .numerics import Rng

EQ, LE = "eq", "le"
BLOCKS = ("A", "b", "c", "l", "u")

OPTIMAL, INFEASIBLE, UNBOUNDED = "optimal", "infeasible", "unbounded"


class SimplexError(RuntimeError):
    """Basis matrix became numerically singular and refactorization did not help."""


@dataclass
class LpInstance:
    n: int
    m: int
    rows: np.ndarray  # int, coordinate list of A
    cols: np.ndarray
    vals: np.ndarray
    b: np.ndarray
    c: np.ndarray
    circ: list[str]
    l: np.ndarray
    u: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.cols = np.asarray(self.cols, dtype=np.int64)
        for name in ("vals", "b", "c", "l", "u"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if not (self.rows.shape == self.cols.shape == self.vals.shape):
            raise ValueError("coordinate arrays must share length")
        if self.b.shape != (self.m,) or len(self.circ) != self.m:
            raise ValueError("b and circ need one entry per constraint")
        if self.c.shape != (self.n,) or self.l.shape != (self.n,) or self.u.shape != (self.n,):
            raise ValueError("c, l, u need one entry per variable")
        if any(t not in (EQ, LE) for t in self.circ):
            raise ValueError("circ entries must be 'eq' or 'le'")
        if np.any(self.l > self.u):
            raise ValueError("l <= u violated")
        if np.any(self.vals == 0):
            raise ValueError("stored A entries must be nonzero")

    @property
    def nnz(self) -> int:
        return int(self.vals.size)

    def dense_A(self) -> np.ndarray:
        A = np.zeros((self.m, self.n))
        np.add.at(A, (self.rows, self.cols), self.vals)
        return A

    def feature_vector(self) -> np.ndarray:
        """Flattened (A, b, c, l, u); distances between instances are taken on this."""
        return np.concatenate([self.dense_A().ravel(), self.b, self.c, self.l, self.u])

    def objective(self, y: np.ndarray) -> float:
        return float(self.c @ y)

    def constraint_violation(self, y: np.ndarray) -> float:
        Ay = self.dense_A() @ y
        le = np.array([t == LE for t in self.circ], dtype=bool)
        viol = [np.abs(Ay - self.b)[~le], np.maximum(Ay - self.b, 0)[le],
                np.maximum(self.l - y, 0), np.maximum(y - self.u, 0)]
        return float(max((np.max(v) for v in viol if v.size), default=0.0))

    def to_json(self) -> dict:
        return {
            "n": self.n, "m": self.m,
            "A": [[int(i), int(j), float(v)] for i, j, v in zip(self.rows, self.cols, self.vals)],
            "b": self.b.tolist(), "c": self.c.tolist(), "circ": list(self.circ),
            "l": self.l.tolist(), "u": self.u.tolist(), "seed": self.seed,
        }

    @classmethod
    def from_json(cls, d: dict) -> "LpInstance":
        trip = np.asarray(d["A"], dtype=np.float64).reshape(-1, 3)
        return cls(d["n"], d["m"], trip[:, 0].astype(np.int64), trip[:, 1].astype(np.int64), trip[:, 2],
                   d["b"], d["c"], list(d["circ"]), d["l"], d["u"], d.get("seed"))


@dataclass
class StandardLp:
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    var_map: dict | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape


@dataclass
class LpSolution:
    status: str
    y: np.ndarray | None = None  # general-form primal (standard-form primal if no var_map)
    z: np.ndarray | None = None  # standard-form duals, one per standard row
    s: np.ndarray | None = None  # standard-form reduced costs c - A^T z
    x_std: np.ndarray | None = None  # standard-form primal
    basis: list[int] = field(default_factory=list)
    objective: float | None = None
    kkt_residual: float | None = None

    def to_json(self) -> dict:
        arr = lambda a: None if a is None else np.asarray(a).tolist()
        return {"status": self.status, "y": arr(self.y), "z": arr(self.z), "s": arr(self.s),
                "basis": [int(k) for k in self.basis], "objective": self.objective,
                "kkt_residual": self.kkt_residual}


@dataclass
class KktReport:
    primal: float
    dual: float
    complementarity: float
    primal_sign: float
    dual_sign: float
    tol: float

    @property
    def max_residual(self) -> float:
        return max(self.primal, self.dual, self.complementarity, self.primal_sign, self.dual_sign)

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.tol


@dataclass
class RegularityCert:
    nondegenerate: bool
    strictly_complementary: bool
    threshold: float

    @property
    def regular(self) -> bool:
        return self.nondegenerate and self.strictly_complementary


# -- generation ----------------------------------------------------------------

def generate_instance(rng: Rng, n: int = 50, m: int = 10, nnz: int = 100, p_le: float = 0.7,
                      bound_std: float = float(np.sqrt(10.0)), c_scale: float = 0.01,
                      seed: int | None = None) -> LpInstance:
    """Random LP: ``nnz`` uniformly placed N(0,1) entries, b, c ~ U[-1,1] (c scaled),
    l, u ~ N(0, bound_std^2) swapped where ``l > u``, ``P(le) = p_le``."""
    if not 0 < nnz <= n * m:
        raise ValueError("nnz must lie in 1..n*m")
    flat = np.sort(rng.sample_without_replacement(n * m, nnz))
    rows, cols = flat // n, flat % n
    vals = rng.normal(0.0, 1.0, nnz)
    vals[vals == 0] = 1e-300  # measure-zero guard so stored entries stay nonzero
    b = rng.uniform(-1.0, 1.0, m)
    c = c_scale * rng.uniform(-1.0, 1.0, n)
    l = rng.normal(0.0, bound_std, n)
    u = rng.normal(0.0, bound_std, n)
    lo, hi = np.minimum(l, u), np.maximum(l, u)
    circ = [LE if f else EQ for f in rng.bernoulli(p_le, m)]
    return LpInstance(n, m, rows, cols, vals, b, c, circ, lo, hi, seed)


def instance_from_seed(seed: int, **kw) -> LpInstance:
    return generate_instance(Rng(seed), seed=seed, **kw)


def perturb_instance(inst: LpInstance, block: str, magnitude: float, rng: Rng) -> LpInstance:
    """Add a Gaussian direction of norm ``magnitude`` to exactly one block.

    The A block is perturbed only at stored nonzeros, so the pattern is kept.
    Perturbed bounds are re-sorted if they cross.
    """
    if block not in BLOCKS:
        raise ValueError(f"unknown block {block!r}")
    if not magnitude > 0:
        raise ValueError("magnitude must be > 0")
    target = {"A": inst.vals, "b": inst.b, "c": inst.c, "l": inst.l, "u": inst.u}[block]
    if target.size == 0:
        raise ValueError(f"block {block} has no entries to perturb")
    d = rng.normal(0.0, 1.0, target.size)
    norm = float(np.linalg.norm(d))
    while norm == 0.0:
        d = rng.normal(0.0, 1.0, target.size)
        norm = float(np.linalg.norm(d))
    new = target + magnitude * d / norm
    fields = {"vals": inst.vals, "b": inst.b, "c": inst.c, "l": inst.l, "u": inst.u}
    fields[{"A": "vals"}.get(block, block)] = new
    if block == "A" and np.any(new == 0):
        raise ValueError("perturbation zeroed a stored entry")
    l, u = fields["l"], fields["u"]
    return LpInstance(inst.n, inst.m, inst.rows.copy(), inst.cols.copy(), fields["vals"].copy(),
                      fields["b"].copy(), fields["c"].copy(), list(inst.circ),
                      np.minimum(l, u), np.maximum(l, u), inst.seed)


# -- standard form ---------------------------------------------------------------

def to_standard_form(inst: LpInstance) -> StandardLp:
    if not (np.all(np.isfinite(inst.l)) and np.all(np.isfinite(inst.u))):
        raise ValueError("finite bounds are required")
    A = inst.dense_A()
    eq = [i for i, t in enumerate(inst.circ) if t == EQ]
    le = [i for i, t in enumerate(inst.circ) if t == LE]
    n, p, q = inst.n, len(eq), len(le)
    Ap, Aq = A[eq], A[le]
    top = np.hstack([Ap, np.zeros((p, q)), np.zeros((p, n))])
    mid = np.hstack([Aq, np.eye(q), np.zeros((q, n))])
    bot = np.hstack([np.eye(n), np.zeros((n, q)), np.eye(n)])
    A_std = np.vstack([top, mid, bot])
    b_std = np.concatenate([inst.b[eq] - Ap @ inst.l, inst.b[le] - Aq @ inst.l, inst.u - inst.l])
    c_std = np.concatenate([inst.c, np.zeros(q + n)])
    var_map = {"n": n, "q": q, "eq_rows": eq, "le_rows": le, "l": inst.l.copy(), "u": inst.u.copy()}
    return StandardLp(A_std, b_std, c_std, var_map)


def decode_solution(std: StandardLp, x_std: np.ndarray) -> np.ndarray:
    """General-form ``y = yh + l``; slack blocks are dropped."""
    if std.var_map is None:
        return np.asarray(x_std, dtype=np.float64).copy()
    n = std.var_map["n"]
    return np.asarray(x_std[:n], dtype=np.float64) + std.var_map["l"]


# -- redundancy removal ------------------------------------------------------------

def independent_rows(A: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Indices of a maximal linearly independent row subset (column-pivoted QR of A^T)."""
    if A.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    _, R, piv = scipy.linalg.qr(A.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0:
        return np.zeros(0, dtype=np.int64)
    rank = int(np.sum(diag > tol * max(1.0, diag[0])))
    return np.sort(piv[:rank])


# -- revised simplex -------------------------------------------------------------

_PIVOT_TOL = 1e-9
_COST_TOL = 1e-9
_REFACTOR_EVERY = 50


@dataclass
class _Tableau:
    A: np.ndarray
    b: np.ndarray
    basis: list[int]
    Binv: np.ndarray
    pivots: int = 0

    def refactor(self) -> None:
        B = self.A[:, self.basis]
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise SimplexError("singular basis at refactorization") from exc
        if not np.all(np.isfinite(self.Binv)):
            raise SimplexError("non-finite basis inverse")

    def x_B(self) -> np.ndarray:
        return self.Binv @ self.b

    def pivot(self, r: int, j: int, col: np.ndarray) -> None:
        piv = col[r]
        row = self.Binv[r] / piv
        self.Binv -= np.outer(col, row)
        self.Binv[r] = row
        self.basis[r] = j
        self.pivots += 1
        if self.pivots % _REFACTOR_EVERY == 0:
            self.refactor()


def _run_simplex(tab: _Tableau, c: np.ndarray, allowed: np.ndarray, max_pivots: int) -> str:
    """Bland's-rule primal simplex from a feasible basis. Returns OPTIMAL or UNBOUNDED."""
    for _ in range(max_pivots):
        cB = c[tab.basis]
        y = cB @ tab.Binv
        d = c - y @ tab.A
        d[tab.basis] = 0.0
        candidates = np.flatnonzero((d < -_COST_TOL) & allowed)
        if candidates.size == 0:
            return OPTIMAL
        j = int(candidates[0])
        col = tab.Binv @ tab.A[:, j]
        xB = np.maximum(tab.x_B(), 0.0)
        pos = np.flatnonzero(col > _PIVOT_TOL)
        if pos.size == 0:
            return UNBOUNDED
        ratios = xB[pos] / col[pos]
        best = ratios.min()
        ties = pos[ratios <= best + 1e-12 * max(1.0, best)]
        r = int(min(ties, key=lambda k: tab.basis[k]))
        tab.pivot(r, j, col)
    raise SimplexError(f"no termination within {max_pivots} pivots")


def _phase_one(A: np.ndarray, b: np.ndarray, max_pivots: int) -> tuple[str, _Tableau | None]:
    """Find a feasible basis of ``A x = b, x >= 0`` (rows assumed independent)."""
    m, N = A.shape
    sign = np.where(b < 0, -1.0, 1.0)
    A1 = A * sign[:, None]
    b1 = b * sign
    # crash basis: a column equal to +e_r claims row r
    basis = [-1] * m
    nz = np.count_nonzero(A1, axis=0)
    for j in np.flatnonzero(nz == 1):
        r = int(np.flatnonzero(A1[:, j])[0])
        if basis[r] < 0 and A1[r, j] == 1.0:
            basis[r] = int(j)
    art_rows = [r for r in range(m) if basis[r] < 0]
    n_art = len(art_rows)
    A_ext = np.hstack([A1, np.zeros((m, n_art))])
    for k, r in enumerate(art_rows):
        A_ext[r, N + k] = 1.0
        basis[r] = N + k
    tab = _Tableau(A_ext, b1, basis, np.eye(m))
    tab.refactor()
    if n_art:
        cost = np.concatenate([np.zeros(N), np.ones(n_art)])
        allowed = np.ones(N + n_art, dtype=bool)
        _run_simplex(tab, cost, allowed, max_pivots)
        infeas = float(np.sum(np.maximum(tab.x_B(), 0.0)[np.array(tab.basis) >= N]))
        if infeas > 1e-9 * max(1.0, float(np.max(np.abs(b1)))):
            return INFEASIBLE, None
        # drive zero-level artificials out of the basis
        for r in range(m):
            if tab.basis[r] < N:
                continue
            row = tab.Binv[r] @ A1
            row[tab.basis[:r] + tab.basis[r + 1:]] = 0.0
            cand = np.flatnonzero(np.abs(row) > _PIVOT_TOL)
            cand = cand[~np.isin(cand, tab.basis)]
            if cand.size == 0:
                raise SimplexError("artificial stuck in basis on an independent row")
            j = int(cand[0])
            tab.pivot(r, j, tab.Binv @ A_ext[:, j])
    tab.A = A1
    tab.refactor()
    return OPTIMAL, tab


def solve_simplex(std: StandardLp, max_pivots: int = 5000, phase_one_only: bool = False) -> LpSolution:
    """Two-phase revised simplex with Bland's rule on ``min c^T x, A x = b, x >= 0``.

    Linearly dependent rows are removed first; if the removed rows are
    inconsistent with the rest the problem is reported infeasible.
    """
    A, b, c = std.A, std.b, std.c
    m, N = A.shape
    keep = independent_rows(A)
    Ak, bk = A[keep], b[keep]
    status, tab = _phase_one(Ak, bk, max_pivots)
    if status == INFEASIBLE:
        return LpSolution(INFEASIBLE)
    x = np.zeros(N)
    x[tab.basis] = np.maximum(tab.x_B(), 0.0)
    if np.max(np.abs(A @ x - b), initial=0.0) > 1e-7 * max(1.0, float(np.max(np.abs(b), initial=0.0))):
        return LpSolution(INFEASIBLE)  # dropped rows disagree with the kept ones
    if phase_one_only:
        return LpSolution(OPTIMAL, x_std=x, basis=list(tab.basis))
    # phase 2 works in the sign-normalised system; duals are flipped back below
    sign = np.where(bk < 0, -1.0, 1.0)
    status = _run_simplex(tab, c, np.ones(N, dtype=bool), max_pivots)
    if status == UNBOUNDED:
        return LpSolution(UNBOUNDED, basis=list(tab.basis))
    x = np.zeros(N)
    x[tab.basis] = np.maximum(tab.x_B(), 0.0)
    z_k = (c[tab.basis] @ tab.Binv) * sign
    z = np.zeros(m)
    z[keep] = z_k
    s = c - A.T @ z
    s[tab.basis] = 0.0
    sol = LpSolution(OPTIMAL, decode_solution(std, x), z, s, x, list(tab.basis), float(c @ x))
    sol.kkt_residual = check_kkt(std, sol).max_residual
    return sol


def solve_instance(inst: LpInstance, **kw) -> LpSolution:
    return solve_simplex(to_standard_form(inst), **kw)


def is_feasible(inst: LpInstance) -> bool:
    return solve_instance(inst, phase_one_only=True).status == OPTIMAL


# -- certificates ------------------------------------------------------------------

def check_kkt(problem, sol: LpSolution, tol: float = 1e-7) -> KktReport:
    """Residuals of ``Ax=b, c=A^T z+s, x*s=0, x>=0, s>=0`` in standard form (max-norm)."""
    if sol.status != OPTIMAL:
        raise ValueError("KKT check needs an optimal solution")
    std = to_standard_form(problem) if isinstance(problem, LpInstance) else problem
    x, z, s = sol.x_std, sol.z, sol.s
    return KktReport(
        primal=float(np.max(np.abs(std.A @ x - std.b), initial=0.0)),
        dual=float(np.max(np.abs(std.c - std.A.T @ z - s), initial=0.0)),
        complementarity=float(np.max(np.abs(x * s), initial=0.0)),
        primal_sign=float(max(0.0, -np.min(x, initial=0.0))),
        dual_sign=float(max(0.0, -np.min(s, initial=0.0))),
        tol=tol,
    )


def regularity_cert(sol: LpSolution, threshold: float = 1e-8) -> RegularityCert:
    if sol.status != OPTIMAL:
        raise ValueError("regularity needs an optimal solution")
    B = np.asarray(sol.basis, dtype=np.int64)
    nonbasic = np.setdiff1d(np.arange(sol.x_std.size), B)
    return RegularityCert(
        nondegenerate=bool(np.all(sol.x_std[B] > threshold)),
        strictly_complementary=bool(np.all(sol.s[nonbasic] > threshold)),
        threshold=threshold,
    )


# -- brute force oracle ----------------------------------------------------------

def brute_force_objective(std: StandardLp, tol: float = 1e-9) -> tuple[str, float | None]:
    """Enumerate every basis of ``A x = b, x >= 0`` and return the best feasible vertex value.

    For tiny problems only; only meaningful when the feasible set is bounded.
    """
    keep = independent_rows(std.A)
    A, b = std.A[keep], std.b[keep]
    m, N = A.shape
    if m == 0:
        return (OPTIMAL, 0.0) if np.all(std.c >= 0) else (UNBOUNDED, None)
    combos = np.array(list(itertools.combinations(range(N), m)), dtype=np.int64)
    Bs = A[:, combos].transpose(1, 0, 2)  # (K, m, m)
    det = np.linalg.det(Bs)
    scale = np.prod(np.linalg.norm(Bs, axis=1), axis=1)
    ok = np.abs(det) > 1e-10 * np.maximum(scale, 1e-300)
    combos, Bs = combos[ok], Bs[ok]
    if combos.size == 0:
        return INFEASIBLE, None
    xB = np.linalg.solve(Bs, np.broadcast_to(b, (len(Bs), m))[..., None])[..., 0]
    feas = np.all(xB >= -tol * max(1.0, float(np.max(np.abs(b)))), axis=1)
    # residual against all rows, including the dependent ones dropped above
    full = np.einsum("ikj,kj->ki", std.A[:, combos], xB)
    feas &= np.max(np.abs(full - std.b), axis=1) <= 1e-8 * max(1.0, float(np.max(np.abs(std.b))))
    if not np.any(feas):
        return INFEASIBLE, None
    obj = np.sum(std.c[combos[feas]] * xB[feas], axis=1)
    return OPTIMAL, float(obj.min())


# -- datasets ---------------------------------------------------------------------

@dataclass
class LpRecord:
    instance: LpInstance
    solution: LpSolution

    def to_json(self) -> dict:
        d = self.instance.to_json()
        d.update(self.solution.to_json())
        return d

    @classmethod
    def from_json(cls, d: dict) -> "LpRecord":
        inst = LpInstance.from_json(d)
        arr = lambda k: None if d.get(k) is None else np.asarray(d[k], dtype=np.float64)
        sol = LpSolution(d["status"], arr("y"), arr("z"), arr("s"), None, list(d.get("basis", [])),
                         d.get("objective"), d.get("kkt_residual"))
        return cls(inst, sol)


@dataclass
class LpDatasetConfig:
    n_train: int = 500
    n_test: int = 200
    n: int = 50
    m: int = 10
    nnz: int = 100
    magnitude: float = 1e-4
    seed: int = 0


@dataclass
class LpDataset:
    train: list[LpRecord]
    test: list[LpRecord]
    perturbed: dict[str, list[LpRecord]]  # block -> one record per test instance


def perturbation_rng(instance_seed: int, block: str) -> Rng:
    """The stream that perturbs ``block`` of the instance drawn from ``instance_seed``."""
    return Rng(instance_seed).derive(BLOCKS.index(block) + 1)


def _solved(inst: LpInstance) -> LpSolution | None:
    sol = solve_instance(inst)
    return sol if sol.status == OPTIMAL else None


def build_dataset(cfg: LpDatasetConfig, log=None) -> LpDataset:
    """Feasible train/test instances plus one perturbation per block per test instance.

    A test candidate is kept only if all its block perturbations remain feasible,
    so every test row has a complete set of perturbed partners.
    """
    root = Rng(cfg.seed)
    gen = dict(n=cfg.n, m=cfg.m, nnz=cfg.nnz)

    def draw(split: int, k: int) -> LpInstance:
        seed = int(root.derive(split, k).next_u64(1)[0] >> np.uint64(1))
        return instance_from_seed(seed, **gen)

    train, k = [], 0
    while len(train) < cfg.n_train:
        inst = draw(1, k)
        k += 1
        sol = _solved(inst)
        if sol is not None:
            train.append(LpRecord(inst, sol))
    test, pert = [], {blk: [] for blk in BLOCKS}
    k = 0
    while len(test) < cfg.n_test:
        inst = draw(2, k)
        k += 1
        sol = _solved(inst)
        if sol is None:
            continue
        partners = {}
        for bi, blk in enumerate(BLOCKS):
            p_inst = perturb_instance(inst, blk, cfg.magnitude, perturbation_rng(inst.seed, blk))
            p_sol = _solved(p_inst)
            if p_sol is None:
                break
            partners[blk] = LpRecord(p_inst, p_sol)
        if len(partners) < len(BLOCKS):
            continue
        test.append(LpRecord(inst, sol))
        for blk in BLOCKS:
            pert[blk].append(partners[blk])
        if log:
            log(f"test {len(test)}/{cfg.n_test}")
    return LpDataset(train, test, pert)


def _dump(path: Path, rec: LpRecord) -> None:
    with open(path, "w") as fh:
        json.dump(rec.to_json(), fh, sort_keys=True)
        fh.write("\n")


def save_dataset(ds: LpDataset, root) -> None:
    root = Path(root)
    for split, recs in (("train", ds.train), ("test", ds.test)):
        (root / split).mkdir(parents=True, exist_ok=True)
        for i, rec in enumerate(recs):
            _dump(root / split / f"{i:05d}.json", rec)
    for blk, recs in ds.perturbed.items():
        d = root / "perturbed" / blk
        d.mkdir(parents=True, exist_ok=True)
        for i, rec in enumerate(recs):
            _dump(d / f"{i:05d}.json", rec)


def _load_dir(d: Path) -> list[LpRecord]:
    out = []
    for f in sorted(d.glob("*.json")):
        with open(f) as fh:
            out.append(LpRecord.from_json(json.load(fh)))
    return out


def load_dataset(root) -> LpDataset:
    root = Path(root)
    for sub in ("train", "test"):
        if not (root / sub).is_dir():
            raise FileNotFoundError(f"missing dataset directory {root / sub}")
    pert = {blk: _load_dir(root / "perturbed" / blk) for blk in BLOCKS if (root / "perturbed" / blk).is_dir()}
    return LpDataset(_load_dir(root / "train"), _load_dir(root / "test"), pert)
