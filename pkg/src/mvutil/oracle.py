"""Brute-force reference solver on discretized instances.

A :class:`DiscreteInstance` has finitely many states and a finite wealth
grid.  :func:`brute_solve` maximizes ``sum p_i U(x_i, b_i)`` under
``sum p_i xi_i x_i <= x0`` by exhaustive search when the assignment space is
small, and otherwise by a scan over the multiplier with a greedy repair.  The
scan reports a dual upper bound so the answer is certified to within the
returned gap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtri

from . import kernels
from .envelope import concavify
from .errors import SearchSpaceTooLarge
from .statespace import BenchmarkMap, StateModel
from .utility import UtilityFamily, eval_utility

INF = math.inf
EXHAUSTIVE_LIMIT = 10**7


@dataclass(frozen=True)
class DiscreteInstance:
    """Atoms ``(prob, xi, b)`` with a shared wealth grid and a budget."""

    atoms: tuple[tuple[float, float, tuple[float, ...]], ...]
    wealth_grid: tuple[float, ...]
    x0: float
    family: UtilityFamily

    def __post_init__(self):
        probs = [a[0] for a in self.atoms]
        if not self.atoms:
            raise ValueError("instance needs at least one atom")
        if any(not q > 0 for q in probs):
            raise ValueError("atom probabilities must be positive")
        if abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError(f"atom probabilities sum to {sum(probs)!r}")
        if any(not xi > 0 for _, xi, _ in self.atoms):
            raise ValueError("pricing kernel values must be positive")
        g = self.wealth_grid
        if any(not math.isfinite(v) for v in g) or list(g) != sorted(set(g)):
            raise ValueError("wealth grid must be finite, sorted and without repeats")
        for _, _, b in self.atoms:
            u = self.family.utility(b)
            if math.isfinite(u.lower) and u.lower_type == "attained" and u.lower not in g:
                raise ValueError(f"wealth grid must contain the lower bound {u.lower} for benchmark {b}")

    @classmethod
    def build(cls, atoms: Sequence, grid: Sequence[float], x0: float, family: UtilityFamily) -> "DiscreteInstance":
        clean = tuple((float(q), float(xi), tuple(float(v) for v in np.atleast_1d(b))) for q, xi, b in atoms)
        return cls(clean, tuple(float(v) for v in grid), float(x0), family)

    @property
    def size(self) -> int:
        return len(self.wealth_grid) ** len(self.atoms)

    def tables(self, concavified: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """``p_i U(x_j, b_i)`` and ``p_i xi_i x_j`` as atom-by-grid matrices."""
        grid = np.array(self.wealth_grid)
        vals = np.empty((len(self.atoms), grid.size))
        costs = np.empty_like(vals)
        for i, (q, xi, b) in enumerate(self.atoms):
            u = self.family.utility(b)
            row = concavify(u)(grid) if concavified else eval_utility(u, grid)
            vals[i] = q * np.asarray(row, dtype=float)
            costs[i] = q * xi * grid
        return vals, costs


@dataclass
class OracleResult:
    status: str  # "optimal" or "infeasible"
    value: float
    assignment: np.ndarray | None
    mode: str
    bound: float = INF
    resolution: float = 0.0
    budget_used: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def certified_gap(self) -> float:
        return self.bound - self.value

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "value": self.value,
            "assignment": None if self.assignment is None else [float(v) for v in self.assignment],
            "mode": self.mode,
            "bound": self.bound,
            "resolution": self.resolution,
            "budget_used": self.budget_used,
        }


def grid_resolution(inst: DiscreteInstance) -> float:
    """Value change from moving every atom by one grid step under the envelope."""
    vals, _ = inst.tables(concavified=True)
    steps = np.diff(vals, axis=1)
    steps = np.where(np.isfinite(steps), np.abs(steps), 0.0)
    return float(steps.max(axis=1).sum()) if steps.size else 0.0


def brute_solve(inst: DiscreteInstance, concavified: bool = False, mode: str = "auto",
                n_lambda: int = 400) -> OracleResult:
    """Best assignment of grid wealth to atoms under the budget.

    ``mode`` is ``"exhaustive"``, ``"scan"`` or ``"auto"`` (exhaustive when
    the assignment space is at most ``EXHAUSTIVE_LIMIT``).
    """
    vals, costs = inst.tables(concavified)
    grid = np.array(inst.wealth_grid)
    usable = np.isfinite(vals)
    min_cost = np.where(usable, costs, INF).min(axis=1)
    tol = 1e-12 * max(1.0, abs(inst.x0))
    res = grid_resolution(inst)
    if not np.all(np.isfinite(min_cost)) or min_cost.sum() > inst.x0 + tol:
        return OracleResult("infeasible", -INF, None, mode, -INF, res)
    if mode == "auto":
        mode = "exhaustive" if inst.size <= EXHAUSTIVE_LIMIT else "scan"
    if mode == "exhaustive":
        if inst.size > EXHAUSTIVE_LIMIT:
            raise SearchSpaceTooLarge(f"{inst.size} assignments exceed the limit {EXHAUSTIVE_LIMIT}")
        v = np.where(usable, vals, -1e300)
        c = np.where(usable, costs, INF)
        best, cols = kernels.enumerate_best(v, c, inst.x0, tol)
        if cols is None:
            return OracleResult("infeasible", -INF, None, mode, -INF, res)
        used = float(costs[np.arange(len(cols)), cols].sum())
        return OracleResult("optimal", float(best), grid[cols], mode, float(best), res, used)
    if mode != "scan":
        raise ValueError(f"unknown mode {mode!r}")
    return _scan(inst, vals, costs, grid, usable, tol, res, n_lambda)


def _scan(inst, vals, costs, grid, usable, tol, res, n_lambda) -> OracleResult:
    m = vals.shape[0]
    rows = np.arange(m)
    v = np.where(usable, vals, -1e300)
    c = np.where(usable, costs, 1e300)
    # slopes seen on the grid bound the multipliers of interest
    dv = np.diff(v, axis=1)
    dc = np.diff(c, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.abs(dv / dc)
    ratios = ratios[np.isfinite(ratios) & (ratios > 0) & (np.abs(dv) < 1e290)]
    lam_hi = float(ratios.max()) * 4.0 if ratios.size else 1.0
    lam_lo = float(ratios.min()) / 4.0 if ratios.size else 1e-6
    lams = np.concatenate(([0.0], np.geomspace(lam_lo, lam_hi, n_lambda)))

    def pick(lam):
        cols = kernels.lagrangian_argmax(v, c, lam)
        return cols, float(c[rows, cols].sum())

    bound = INF
    feasible_lams = []
    seen: dict[bytes, float] = {}
    cands = []
    for lam in lams:
        cols, cost = pick(lam)
        dual = float((v - lam * c).max(axis=1).sum()) + lam * inst.x0
        bound = min(bound, dual)
        if cost <= inst.x0 + tol:
            feasible_lams.append(lam)
            key = cols.tobytes()
            if key not in seen:
                seen[key] = float(v[rows, cols].sum())
                cands.append(cols)
    # greedy repair of the few best distinct Lagrangian points
    cands.sort(key=lambda cs: -seen[cs.tobytes()])
    best_val, best_cols = -INF, None
    for cols in cands[:8]:
        cols = _repair(v, c, cols, inst.x0, tol, exchange=False)
        val = float(v[rows, cols].sum())
        if val > best_val:
            best_val, best_cols = val, cols
    if feasible_lams:
        # refine the smallest feasible multiplier against its infeasible neighbour
        lam_f = min(feasible_lams)
        below = lams[lams < lam_f]
        if below.size:
            a, b = float(below.max()), lam_f
            for _ in range(60):
                mid = 0.5 * (a + b)
                cols, cost = pick(mid)
                if cost <= inst.x0 + tol:
                    b = mid
                else:
                    a = mid
            for lam in (a, b):
                bound = min(bound, float((v - lam * c).max(axis=1).sum()) + lam * inst.x0)
            cols, cost = pick(b)
            cols = _repair(v, c, cols, inst.x0, tol, exchange=False)
            val = float(v[rows, cols].sum())
            if val > best_val:
                best_val, best_cols = val, cols
    if best_cols is None:
        return OracleResult("infeasible", -INF, None, "scan", bound, res)
    best_cols = _repair(v, c, best_cols, inst.x0, tol)
    best_val = float(v[rows, best_cols].sum())
    used = float(costs[rows, best_cols].sum())
    return OracleResult("optimal", best_val, grid[best_cols], "scan", bound, res, used)


def _repair(v, c, cols, budget, tol, exchange: bool = True, max_rounds: int | None = None) -> np.ndarray:
    """Spend leftover budget on the best single-atom upgrades, then try one-for-one exchanges."""
    cols = cols.copy()
    m = v.shape[0]
    rows = np.arange(m)
    max_rounds = max_rounds or 8 * m
    for _ in range(max_rounds):
        left = budget - float(c[rows, cols].sum())
        cur_v = v[rows, cols][:, None]
        cur_c = c[rows, cols][:, None]
        gain = np.where(c - cur_c <= left + tol, v - cur_v, -INF)
        i, j = np.unravel_index(np.argmax(gain), gain.shape)
        if gain[i, j] > 1e-15:
            cols[i] = j
            continue
        if not exchange or not _exchange(v, c, cols, left, tol):
            break
    return cols


def _exchange(v, c, cols, left, tol) -> bool:
    """Downgrade one atom to fund an upgrade of another if that raises the total."""
    m = v.shape[0]
    rows = np.arange(m)
    cur_v = v[rows, cols][:, None]
    cur_c = c[rows, cols][:, None]
    dv = v - cur_v
    dc = c - cur_c
    freed = np.where(dc < 0, -dc, -INF)
    loss = np.where(dc < 0, -dv, INF)
    best = 0.0
    move = None
    for i in range(m):
        for j in np.nonzero(np.isfinite(freed[i]))[0]:
            room = left + freed[i, j]
            up = np.where(dc <= room + tol, dv, -INF)
            up[i] = -INF
            k, l = np.unravel_index(np.argmax(up), up.shape)
            net = up[k, l] - loss[i, j]
            if net > best + 1e-15:
                best, move = net, (i, j, k, l)
    if move is None:
        return False
    i, j, k, l = move
    cols[i] = j
    cols[k] = l
    return True


def discretize(model: StateModel, family: UtilityFamily, benchmark: BenchmarkMap, x0: float, n_atoms: int,
               grid: Sequence[float]) -> DiscreteInstance:
    """Equal-probability atoms at the mid-quantiles of a non-atomic state."""
    dist = model.dist
    q = (np.arange(n_atoms) + 0.5) / n_atoms
    if dist.kind == "standard-normal":
        ws = ndtri(q)
    elif dist.kind == "uniform":
        ws = dist.lo + q * (dist.hi - dist.lo)
    else:
        probs = dist.atom_probs()
        atoms = [(pr, float(model.kernel(w)), benchmark.values[int(benchmark.region_index(w))])
                 for w, pr in zip(dist.atom_values(), probs)]
        return DiscreteInstance.build(atoms, grid, x0, family)
    xis = np.asarray(model.kernel(ws), dtype=float)
    idx = np.asarray(benchmark.region_index(ws))
    atoms = [(1.0 / n_atoms, float(xi), benchmark.values[int(r)]) for xi, r in zip(xis, idx)]
    return DiscreteInstance.build(atoms, grid, x0, family)


def refine_grid(make: Callable[[np.ndarray], DiscreteInstance], lo: float, hi: float, n0: int = 16,
                tol: float = 1e-4, max_doublings: int = 10, **solve_kw) -> tuple[OracleResult, np.ndarray]:
    """Double the grid on ``[lo, hi]`` until the brute value moves by less than ``tol``."""
    n = n0
    prev = None
    for _ in range(max_doublings + 1):
        grid = np.linspace(lo, hi, n + 1)
        out = brute_solve(make(grid), **solve_kw)
        if prev is not None and out.status == prev.status == "optimal" and abs(out.value - prev.value) < tol:
            return out, grid
        prev = out
        n *= 2
    return prev, grid


def chord_sup(u, xs, xq) -> np.ndarray:
    """Best chord value of ``u`` over grid pairs bracketing each query point."""
    xs = np.asarray(xs, dtype=float)
    us = np.asarray(eval_utility(u, xs), dtype=float)
    return kernels.chord_sup(xs, us, np.atleast_1d(np.asarray(xq, dtype=float)))
