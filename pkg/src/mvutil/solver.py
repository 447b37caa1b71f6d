"""Budget-constrained expected-utility maximization through the conjugate selections.

The multiplier search runs on the cost curve ``g(lam) = E[xi X_min(lam xi)]``.
It is nonincreasing and right-continuous; its left limit is the cost of the
largest selection ``X_max``.  A budget that falls strictly inside a jump of
``g`` is met by mixing the two selections on part of the jump set.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .conjugate import SelectionCurves, conjugate_at, selection_curves
from .envelope import ConcaveEnvelope, concavify
from .errors import Infeasible, NotAGap, NumericalBracketFailure
from .statespace import BenchmarkMap, StateModel, kernel_essential_bounds
from .utility import PiecewiseUtility, UtilityFamily, eval_utility

INF = math.inf
LAMBDA_CAP = 1e12
_SNAP_REL = 1e-9


# ---------------------------------------------------------------- problem


@dataclass(frozen=True)
class _Region:
    lo: float
    hi: float
    b: tuple[float, ...]
    prob: float
    u: PiecewiseUtility
    env: ConcaveEnvelope
    curves: SelectionCurves


@dataclass(frozen=True, eq=False)
class Problem:
    """Maximize ``E[U(X, B)]`` subject to ``E[xi X] <= x0``."""

    model: StateModel
    family: UtilityFamily
    benchmark: BenchmarkMap
    x0: float

    def __post_init__(self):
        if not math.isfinite(self.x0):
            raise ValueError("x0 must be finite")
        if self.benchmark.dim != self.family.benchmark_dim:
            raise ValueError(
                f"benchmark has dimension {self.benchmark.dim}, family expects {self.family.benchmark_dim}"
            )

    @property
    def dist(self):
        return self.model.dist

    @property
    def kernel(self):
        return self.model.kernel

    @property
    def engine(self):
        return self.model.engine

    def with_x0(self, x0: float) -> "Problem":
        return Problem(self.model, self.family, self.benchmark, float(x0))

    def with_family(self, family: UtilityFamily) -> "Problem":
        return Problem(self.model, family, self.benchmark, self.x0)

    @cached_property
    def regions(self) -> tuple[_Region, ...]:
        out = []
        lo_s, hi_s = self.dist.support()
        for lo, hi, b in self.benchmark.regions():
            a, c = max(lo, lo_s), min(hi, hi_s)
            if self.dist.is_discrete:
                prob = self.dist.prob(lo, hi)
            else:
                prob = self.dist.prob(a, c) if c > a else 0.0
            u = self.family.utility(b)
            env = concavify(u)
            out.append(_Region(lo, hi, b, prob, u, env, selection_curves(env)))
        return tuple(out)

    @cached_property
    def _static_splits(self) -> tuple[float, ...]:
        pts = set(self.benchmark.breakpoints)
        if self.kernel.form != "lognormal":
            for a, b, _, _ in self.kernel.pieces:
                pts.update(v for v in (a, b) if math.isfinite(v))
        return tuple(sorted(pts))

    def splits(self, lam: float) -> list[float]:
        pts = list(self._static_splits)
        if 0 < lam < INF:
            for r in self.regions:
                for y in r.curves.breaks:
                    pts += self.kernel.crossings(float(y) / lam, r.lo, r.hi)
        return pts

    # -- pointwise maps
    def xi(self, w):
        return self.kernel(w)

    def region_of(self, w) -> np.ndarray:
        return self.benchmark.region_index(w)

    def selection(self, lam: float, w, which: str = "min") -> np.ndarray:
        """``X_min(lam xi(w))`` (or ``X_max``) in the benchmark region of ``w``."""
        w = np.asarray(w, dtype=float)
        idx = self.region_of(w)
        if lam == INF:
            y = np.full(w.shape, INF)
        else:
            y = lam * self.xi(w)
        out = np.empty(w.shape)
        for j, r in enumerate(self.regions):
            m = idx == j
            if m.any():
                out[m] = r.curves.x_min(y[m]) if which == "min" else r.curves.x_max(y[m])
        return out

    def utility_at(self, w, x) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        x = np.broadcast_to(np.asarray(x, dtype=float), w.shape)
        idx = self.region_of(w)
        out = np.empty(w.shape)
        for j, r in enumerate(self.regions):
            m = idx == j
            if m.any():
                out[m] = eval_utility(r.u, x[m])
        return out

    def lower_map(self, w) -> np.ndarray:
        idx = self.region_of(np.asarray(w, dtype=float))
        vals = np.array([r.u.lower for r in self.regions])
        return vals[idx]

    def bliss_map(self, w) -> np.ndarray:
        idx = self.region_of(np.asarray(w, dtype=float))
        vals = np.array([r.u.bliss for r in self.regions])
        return vals[idx]

    def expect(self, f, splits=()) -> float:
        return self.model.expect(f, list(splits) + list(self._static_splits))

    def expect_with_error(self, f, splits=()):
        return self.engine.expect_with_error(self.dist, f, list(splits) + list(self._static_splits))

    def cost(self, X: Callable, splits=()) -> float:
        return self.expect(lambda w: self.xi(w) * X(w), splits)

    def value(self, X: Callable, splits=()) -> float:
        return self.expect(lambda w: self.utility_at(w, X(w)), splits)

    @property
    def budget_tol(self) -> float:
        return 1e-8 * max(1.0, abs(self.x0))


# ---------------------------------------------------------------- g and J


def eval_g(p: Problem, lam: float) -> float:
    """``E[xi X_min(lam xi)]``."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    return p.expect(lambda w: p.xi(w) * p.selection(lam, w, "min"), p.splits(lam))


def eval_g_upper(p: Problem, lam: float) -> float:
    """``E[xi X_max(lam xi)]``, the left limit of ``g`` at ``lam``."""
    return p.expect(lambda w: p.xi(w) * p.selection(lam, w, "max"), p.splits(lam))


def eval_J(p: Problem, lam: float) -> float:
    """``E[U(X_min(lam xi), B)]``."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    return p.expect(lambda w: p.utility_at(w, p.selection(lam, w, "min")), p.splits(lam))


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("OPTIMIZER_THREADS", "1")))
    except ValueError:
        return 1


def g_curve(p: Problem, lams: Sequence[float], threads: int | None = None) -> list[tuple[float, float]]:
    """``g`` on a grid of multipliers; results are in input order."""
    n = threads or _threads()
    lams = [float(v) for v in lams]
    if n <= 1:
        return [(lam, eval_g(p, lam)) for lam in lams]
    with ThreadPoolExecutor(max_workers=n) as pool:
        vals = list(pool.map(lambda lam: eval_g(p, lam), lams))
    return list(zip(lams, vals))


class GFunction:
    """Cached cost curve with its symbolic jump locations."""

    def __init__(self, p: Problem):
        self.p = p
        self._cache: dict[float, float] = {}
        self._upper: dict[float, float] = {}

    def __call__(self, lam: float) -> float:
        v = self._cache.get(lam)
        if v is None:
            v = eval_g(self.p, lam)
            self._cache[lam] = v
        return v

    def upper(self, lam: float) -> float:
        v = self._upper.get(lam)
        if v is None:
            v = eval_g_upper(self.p, lam)
            self._upper[lam] = v
        return v

    @cached_property
    def lambda0(self) -> float:
        return classify_case(self.p)[1]

    @cached_property
    def jump_slopes(self) -> list[float]:
        return [c for c, _, _ in jump_candidates(self.p)]

    def cached(self) -> list[tuple[float, float]]:
        return sorted(self._cache.items())


def jump_candidates(p: Problem) -> list[tuple[float, int, float]]:
    """Multipliers at which ``lam xi`` hits a jump slope with positive probability.

    Returned as ``(lam, region index, slope)`` sorted by ``lam``.
    """
    out = []
    for j, r in enumerate(p.regions):
        if r.prob <= 0:
            continue
        jumps = r.curves.jump_slopes()
        if not jumps:
            continue
        levels = _kernel_levels(p, r)
        for y, _, _ in jumps:
            for v in levels:
                out.append((y / v, j, y))
    return sorted(set(out))


def _kernel_levels(p: Problem, r: _Region) -> list[float]:
    """Values taken by ``xi`` with positive probability inside a region."""
    if p.dist.is_discrete:
        vals = [v for v, _ in p.dist.atoms if r.lo <= v < r.hi]
        return sorted({float(p.xi(v)) for v in vals})
    lo_s, hi_s = p.dist.support()
    a, b = max(r.lo, lo_s), min(r.hi, hi_s)
    return sorted({c for s, e, c in p.kernel.flat_parts(a, b) if p.dist.prob(s, e) > 0})


def _mass_where(p: Problem, r: _Region, pred: Callable[[float], bool]) -> float:
    """Probability that ``W`` is in region ``r`` at a positive-mass kernel level satisfying ``pred``."""
    if p.dist.is_discrete:
        return float(sum(q for v, q in p.dist.atoms if r.lo <= v < r.hi and pred(float(p.xi(v)))))
    lo_s, hi_s = p.dist.support()
    a, b = max(r.lo, lo_s), min(r.hi, hi_s)
    return float(sum(p.dist.prob(s, e) for s, e, c in p.kernel.flat_parts(a, b) if pred(c)))


# ---------------------------------------------------------------- classification


def _xi_bounds(p: Problem, r: _Region) -> tuple[float, float]:
    if p.dist.is_discrete:
        vals = [float(p.xi(v)) for v, _ in p.dist.atoms if r.lo <= v < r.hi]
        return (min(vals), max(vals)) if vals else (INF, -INF)
    lo_s, hi_s = p.dist.support()
    a, b = max(r.lo, lo_s), min(r.hi, hi_s)
    if not b > a:
        return INF, -INF
    return p.kernel.range_on(a, b)


def classify_case(p: Problem) -> tuple[int, float]:
    """Case 1/2/3 and ``lambda0 = ess sup alpha(B) / xi``."""
    lam0 = 0.0
    for r in p.regions:
        if r.prob <= 0:
            continue
        alpha = r.env.tail_slope
        if alpha <= 0:
            continue
        xi_min, _ = _xi_bounds(p, r)
        lam0 = max(lam0, INF if xi_min <= 0 else alpha / xi_min)
    if lam0 == 0.0:
        return 1, 0.0
    if lam0 == INF:
        return 3, INF
    return 2, lam0


@dataclass(frozen=True)
class Feasibility:
    status: str
    lower_cost: float
    upper_cost: float

    def to_dict(self) -> dict:
        return {"status": self.status, "bounds": [self.lower_cost, self.upper_cost]}


def feasibility(p: Problem) -> Feasibility:
    """Compare the budget with the costs of the lower bound and the bliss point."""
    lo_cost = p.expect(lambda w: p.xi(w) * p.lower_map(w))
    hi_cost = p.expect(lambda w: p.xi(w) * p.bliss_map(w))
    tol = p.budget_tol
    open_lower = any(r.u.lower_type == "open" for r in p.regions if r.prob > 0)
    if p.x0 < lo_cost - tol or (open_lower and p.x0 <= lo_cost + tol):
        status = "infeasible"
    elif abs(p.x0 - lo_cost) <= tol:
        status = "boundary"
    elif p.x0 >= hi_cost - tol:
        status = "bliss"
    else:
        status = "interior"
    return Feasibility(status, lo_cost, hi_cost)


# ---------------------------------------------------------------- solutions


class Solution:
    """A terminal wealth as a function of the state (and an auxiliary uniform for atomic gaps)."""

    kind = "solution"
    needs_uniform = False

    def __call__(self, w, u=None) -> np.ndarray:
        raise NotImplementedError

    def splits(self) -> list[float]:
        return []


class SelectionSolution(Solution):
    def __init__(self, p: Problem, lam: float, which: str = "min"):
        self.p, self.lam, self.which = p, lam, which
        self.kind = "selection-" + which

    def __call__(self, w, u=None):
        return self.p.selection(self.lam, w, self.which)

    def splits(self):
        return self.p.splits(self.lam)


class ShiftedMapSolution(Solution):
    """``base(w) + shift``, used for the lower bound and bliss solutions."""

    def __init__(self, base: Callable, shift: float = 0.0, kind: str = "map"):
        self.base, self.shift, self.kind = base, shift, kind

    def __call__(self, w, u=None):
        return self.base(w) + self.shift


class FillSolution(Solution):
    """``X_min + min(c, X_max - X_min)`` on the jump set."""

    kind = "fill"

    def __init__(self, p: Problem, lam: float, c: float):
        self.p, self.lam, self.c = p, lam, c

    def __call__(self, w, u=None):
        lo = self.p.selection(self.lam, w, "min")
        hi = self.p.selection(self.lam, w, "max")
        gap = hi - lo
        with np.errstate(invalid="ignore"):
            add = np.where(gap > 0, np.minimum(self.c, gap), 0.0)
        return lo + add

    def splits(self):
        return self.p.splits(self.lam)


@dataclass(frozen=True)
class _JumpPart:
    """Part of the jump set with constant gap: a state interval or one atom."""

    lo: float
    hi: float
    xi: float
    gap: float
    atom: bool
    prob: float

    @property
    def weight(self) -> float:
        return self.xi * self.gap


class GapMember(Solution):
    """``X_min + (X_max - X_min) 1{t in A}`` with ``A`` a finite union of intervals."""

    kind = "gap-member"

    def __init__(self, family: "GapFamily", n: int, intervals: list[tuple[float, float]]):
        self.family = family
        self.n = n
        self.intervals = intervals
        self.needs_uniform = family.atomic

    def coordinate(self, w, u=None) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if not self.family.atomic:
            return w
        if u is None:
            raise ValueError("atomic gap solutions need an auxiliary uniform draw")
        rank = np.searchsorted(self.family.atom_values, w)
        return rank + np.asarray(u, dtype=float)

    def indicator(self, w, u=None) -> np.ndarray:
        t = self.coordinate(w, u)
        ind = np.zeros(t.shape, dtype=bool)
        for a, b in self.intervals:
            ind |= (t >= a) & (t < b)
        return ind

    def __call__(self, w, u=None):
        p, lam = self.family.p, self.family.lam
        lo = p.selection(lam, w, "min")
        hi = p.selection(lam, w, "max")
        gap = hi - lo
        ind = self.indicator(w, u) & (gap > 0)
        return np.where(ind, hi, lo)

    def splits(self):
        pts = self.family.p.splits(self.family.lam)
        if not self.family.atomic:
            pts += [v for a, b in self.intervals for v in (a, b) if math.isfinite(v)]
        return pts

    def cost(self) -> float:
        return self.family.g_lo + sum(self.family.mass(a, b) for a, b in self.intervals)


class GapFamily:
    """Optimal solutions indexed by ``n >= 1`` for a budget inside a jump of ``g``."""

    def __init__(self, p: Problem, lam: float, x0: float, parts: list[_JumpPart], g_lo: float, g_hi: float,
                 atom_values: np.ndarray | None = None):
        self.p, self.lam, self.x0 = p, lam, x0
        self.parts = parts
        self.g_lo, self.g_hi = g_lo, g_hi
        self.atomic = any(pt.atom for pt in parts)
        self.atom_values = atom_values if atom_values is not None else np.array([])
        self.rho1 = sum(pt.weight * pt.prob for pt in parts)
        self.rho2 = x0 - g_lo
        if not (0 < self.rho2 < self.rho1):
            raise NotAGap("budget is not strictly inside the jump")
        ratio = (self.rho1 - self.rho2) / self.rho2
        self._k = max(0, math.ceil(math.log2(ratio))) if ratio > 1 else 0
        self._members: dict[int, GapMember] = {}

    # mass of the coordinate interval [a, b) measured by xi * gap
    def _cum(self, t: float) -> float:
        total = 0.0
        for pt in self.parts:
            if t <= pt.lo:
                continue
            if pt.atom:
                frac = min(1.0, t - pt.lo)
                total += pt.weight * pt.prob * frac
            else:
                total += pt.weight * self.p.dist.prob(pt.lo, min(t, pt.hi))
        return total

    def mass(self, a: float, b: float) -> float:
        return self._cum(b) - self._cum(a) if b > a else 0.0

    def _inverse(self, level: float) -> float:
        if level <= 0:
            return self._span[0]
        if level >= self.rho1:
            return self._span[1]
        lo, hi = self._span
        if not math.isfinite(lo):
            lo = -40.0
        if not math.isfinite(hi):
            hi = 40.0
        return brentq(lambda t: self._cum(t) - level, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)

    @cached_property
    def _span(self) -> tuple[float, float]:
        return min(pt.lo for pt in self.parts), max(pt.hi for pt in self.parts)

    def member(self, n: int) -> GapMember:
        if n < 1:
            raise ValueError("family members are indexed from 1")
        m = self._members.get(n)
        if m is None:
            r1, r2 = self.rho1, self.rho2
            a0 = 0.5 * (r1 - r2)
            an = r2 - (r1 - r2) / 2.0 ** (n + self._k)
            delta = self._inverse(an)
            eps = self._inverse(an + a0)
            zeta = self._inverse(r2 + a0)
            m = GapMember(self, n, [(-INF, delta), (eps, zeta)])
            self._members[n] = m
        return m

    def disagreement(self, i: int, j: int) -> float:
        """``P[X_i != X_j]``."""
        mi, mj = self.member(i), self.member(j)
        pts = sorted({v for a, b in mi.intervals + mj.intervals for v in (a, b)} | {self._span[0], self._span[1]})
        total = 0.0
        for a, b in zip(pts, pts[1:]):
            if not b > a:
                continue
            mid = 0.5 * (a + b) if math.isfinite(a) and math.isfinite(b) else (b - 1.0 if math.isfinite(b) else a + 1.0)
            ini = any(x <= mid < y for x, y in mi.intervals)
            inj = any(x <= mid < y for x, y in mj.intervals)
            if ini != inj:
                total += self._prob(a, b)
        return total

    def _prob(self, a: float, b: float) -> float:
        total = 0.0
        for pt in self.parts:
            lo, hi = max(a, pt.lo), min(b, pt.hi)
            if hi <= lo:
                continue
            if pt.atom:
                total += pt.prob * (hi - lo)
            else:
                total += self.p.dist.prob(lo, hi)
        return total

    def value(self) -> float:
        return eval_J(self.p, self.lam) + self.lam * (self.x0 - self.g_lo)


def _jump_parts(p: Problem, lam: float) -> tuple[list[_JumpPart], bool, bool]:
    """Pieces of the jump set at ``lam``; flags for infinite gaps and interval-type sets."""
    parts: list[_JumpPart] = []
    infinite = False
    all_interval = True
    tol = 1e-12
    for j, r in enumerate(p.regions):
        if r.prob <= 0:
            continue
        for y, x_lo, x_hi in r.curves.jump_slopes():
            cs = conjugate_at(r.env, y)
            if p.dist.is_discrete:
                for rank, (v, q) in enumerate(p.dist.atoms):
                    if not (r.lo <= v < r.hi):
                        continue
                    xi = float(p.xi(v))
                    if abs(lam * xi - y) <= tol * max(1.0, y):
                        gap = x_hi - x_lo
                        infinite |= math.isinf(gap)
                        all_interval &= cs.interval
                        parts.append(_JumpPart(float(rank), float(rank + 1), xi, gap, True, q))
            else:
                lo_s, hi_s = p.dist.support()
                a, b = max(r.lo, lo_s), min(r.hi, hi_s)
                for s, e, c in p.kernel.flat_parts(a, b):
                    if abs(lam * c - y) <= tol * max(1.0, y) and p.dist.prob(s, e) > 0:
                        gap = x_hi - x_lo
                        infinite |= math.isinf(gap)
                        all_interval &= cs.interval
                        parts.append(_JumpPart(s, e, c, gap, False, p.dist.prob(s, e)))
    return sorted(parts, key=lambda pt: pt.lo), infinite, all_interval


def construct_gap_family(p: Problem, lam: float, x0: float | None = None) -> GapFamily:
    """Family of optimal solutions mixing the two selections on the jump set at ``lam``."""
    x0 = p.x0 if x0 is None else float(x0)
    g_lo = eval_g(p, lam)
    g_hi = eval_g_upper(p, lam)
    tol = 1e-8 * max(1.0, abs(x0))
    if not (g_lo < x0 - tol and x0 < g_hi - tol):
        raise NotAGap(f"budget {x0} not strictly inside ({g_lo}, {g_hi})")
    parts, infinite, _ = _jump_parts(p, lam)
    if not parts or infinite:
        raise NotAGap("no positive-mass jump set with finite gaps at this multiplier")
    atom_values = p.dist.atom_values() if p.dist.is_discrete else None
    return GapFamily(p, lam, x0, parts, g_lo, g_hi, atom_values)


def gap_member(p: Problem, lam: float, x0: float, n: int) -> Solution:
    """One member of the family; collapses to a selection at the ends of the jump."""
    tol = 1e-8 * max(1.0, abs(x0))
    g_lo = eval_g(p, lam)
    g_hi = eval_g_upper(p, lam)
    if abs(x0 - g_lo) <= tol:
        return SelectionSolution(p, lam, "min")
    if abs(x0 - g_hi) <= tol:
        return SelectionSolution(p, lam, "max")
    return construct_gap_family(p, lam, x0).member(n)


# ---------------------------------------------------------------- report


@dataclass
class SolveReport:
    classification: str
    case: int
    lambda0: float
    x0: float
    feasibility: Feasibility
    lambda_star: float | None = None
    mu_star: float | None = None
    optimal_value: float | None = None
    value_is_bound: bool = False
    value_exact: bool = True
    budget_used: float | None = None
    solution: Solution | None = None
    family: GapFamily | None = None
    witness: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "classification": self.classification,
            "case": self.case,
            "lambda0": self.lambda0,
            "x0": self.x0,
            "feasibility": self.feasibility.to_dict(),
            "lambda_star": self.lambda_star,
            "mu_star": self.mu_star,
            "optimal_value": self.optimal_value,
            "value_is_bound": self.value_is_bound,
            "value_exact": self.value_exact,
            "budget_used": self.budget_used,
            "solution_kind": None if self.solution is None else self.solution.kind,
            "witness": self.witness,
            "notes": self.notes,
        }
        if self.family is not None:
            d["family"] = {
                "lambda": self.family.lam,
                "jump_cost": [self.family.g_lo, self.family.g_hi],
                "members": "indexed by n >= 1",
            }
        d.update(self.extras)
        return _jsonable(d)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isinf(v):
            return "+inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
        return v
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# ---------------------------------------------------------------- solve


def _accept(p: Problem, g: float, lam: float) -> bool:
    if p.engine.is_monte_carlo and not p.dist.is_discrete:
        _, se = p.expect_with_error(lambda w: p.xi(w) * p.selection(lam, w, "min"), p.splits(lam))
        return abs(g - p.x0) <= max(3.0 * se, p.budget_tol)
    return abs(g - p.x0) <= p.budget_tol


def _bracket(p: Problem, G: GFunction, case: int, lam0: float) -> tuple[float, float]:
    x0 = p.x0
    hi = max(lam0 * 2.0, 1.0) if case == 2 else 1.0
    while G(hi) > x0:
        hi *= 2.0
        if hi > LAMBDA_CAP:
            raise NumericalBracketFailure(f"g(lambda) stays above x0={x0} up to lambda={LAMBDA_CAP:g}")
    if case == 2:
        return lam0, hi
    lo = hi / 2.0
    while G(lo) <= x0:
        hi = lo
        lo /= 2.0
        if lo < 1e-300:
            raise NumericalBracketFailure("g(lambda) stays below x0 as lambda -> 0")
    return lo, hi


def _bisect(G: GFunction, x0: float, lo: float, hi: float) -> tuple[float, float]:
    """Shrink ``[lo, hi]`` with ``G(lo) > x0 >= G(hi)`` to machine width."""
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        if G(mid) > x0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 2e-16 * hi:
            break
    return lo, hi


def _resolve_jump(p: Problem, lam: float, report: SolveReport, G: GFunction) -> SolveReport:
    """Budget sits in ``[g(lam), g(lam-)]``: pick the selection, a fill or a gap family."""
    x0 = p.x0
    tol = p.budget_tol
    g_lo, g_hi = G(lam), G.upper(lam)
    report.lambda_star = lam
    if abs(x0 - g_lo) <= tol:
        report.classification = "unique"
        report.solution = SelectionSolution(p, lam, "min")
        report.optimal_value = eval_J(p, lam)
        report.budget_used = g_lo
        return report
    if abs(x0 - g_hi) <= tol:
        report.classification = "unique"
        report.solution = SelectionSolution(p, lam, "max")
        report.optimal_value = p.value(report.solution, p.splits(lam))
        report.budget_used = g_hi
        return report
    parts, infinite, all_interval = _jump_parts(p, lam)
    if not parts:
        raise NumericalBracketFailure(f"no positive-mass jump set at lambda={lam}")
    need = x0 - g_lo
    report.optimal_value = eval_J(p, lam) + lam * need
    if infinite or all_interval:
        c = _fill_level(parts, need)
        report.solution = FillSolution(p, lam, c)
        single = len(parts) == 1 and parts[0].atom
        report.classification = "unique" if single else "non-unique"
        report.budget_used = p.cost(report.solution, p.splits(lam))
        report.extras["fill_level"] = c
        return report
    fam = GapFamily(p, lam, x0, parts, g_lo, g_hi, p.dist.atom_values() if p.dist.is_discrete else None)
    report.classification = "non-unique"
    report.family = fam
    report.solution = fam.member(1)
    report.budget_used = fam.member(1).cost()
    if fam.atomic:
        report.notes.append("atomic jump set: family members randomize with an auxiliary uniform draw")
    return report


def _fill_level(parts: list[_JumpPart], need: float) -> float:
    """``c`` with ``sum prob * xi * min(c, gap) = need``."""

    def spend(c: float) -> float:
        return sum(pt.prob * pt.xi * min(c, pt.gap) for pt in parts)

    hi = 1.0
    while spend(hi) < need:
        hi *= 2.0
        if hi > 1e300:
            raise NumericalBracketFailure("fill level diverged")
    return brentq(lambda c: spend(c) - need, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


def _infinite_witness(p: Problem, lower_cost: float) -> list[dict]:
    """Value lower bounds from placing the spare budget where ``lam xi < alpha(B)``."""
    out = []
    spare = p.x0 - lower_cost
    alpha = np.array([r.env.tail_slope for r in p.regions])
    for lam in (1.0, 10.0, 100.0):

        def on_set(w, lam=lam):
            return lam * p.xi(w) < alpha[p.region_of(w)]

        splits = [c for r in p.regions if r.env.tail_slope > 0 for c in p.kernel.crossings(r.env.tail_slope / lam, r.lo, r.hi)]
        mass = p.expect(lambda w: p.xi(w) * on_set(w), splits)
        if not mass > 0:
            continue
        c = spare / mass

        def X(w, c=c, on_set=on_set):
            return p.lower_map(w) + c * on_set(w)

        out.append({"lambda": lam, "extra_wealth": c, "value_lower_bound": p.value(X, splits)})
    return out


def _unattainable(p: Problem, lam0: float, theta: float, report: SolveReport) -> SolveReport:
    upper = SelectionSolution(p, lam0, "max")
    base = p.value(upper, p.splits(lam0))
    report.classification = "unattainable"
    report.lambda_star = None
    report.solution = None
    report.value_is_bound = True
    report.optimal_value = base + lam0 * (p.x0 - theta)
    atom_mass = sum(_mass_where(p, r, lambda c, r=r: abs(lam0 * c - r.env.tail_slope) <= 1e-12 * max(1.0, r.env.tail_slope))
                    for r in p.regions if r.prob > 0 and r.env.tail_slope > 0)
    lam1_below = math.isfinite(eval_J(p, lam0 * (1.0 - 1e-6)))
    if lam1_below:
        report.optimal_value = base
        report.value_exact = True
        report.notes.append("J finite below lambda0: supremum equals E[U(X_max(lambda0 xi))]")
    elif atom_mass == 0.0:
        report.value_exact = True
        report.notes.append("P[lambda0 xi = alpha(B)] = 0: bound is the supremum, approached but not attained")
    else:
        report.value_exact = False
        report.notes.append("bound only: lambda0 xi hits alpha(B) with positive probability")
    report.extras["theta"] = theta
    report.extras["upper_selection_value"] = base
    return report


def solve(p: Problem, raise_infeasible: bool = False) -> SolveReport:
    """Dispatch on feasibility and case, then find the multiplier and build a solution."""
    case, lam0 = classify_case(p)
    feas = feasibility(p)
    report = SolveReport("pending", case, lam0, p.x0, feas)
    if any(math.isinf(r.u.lower) for r in p.regions if r.prob > 0):
        raise ValueError("solver needs a finite lower bound in every benchmark region")
    if feas.status == "infeasible":
        if raise_infeasible:
            raise Infeasible(f"x0={p.x0} is below the cheapest admissible wealth {feas.lower_cost}")
        report.classification = "infeasible"
        return report
    if feas.status == "boundary":
        report.classification = "boundary"
        report.solution = ShiftedMapSolution(p.lower_map, 0.0, "lower-bound")
        report.optimal_value = p.value(report.solution)
        report.budget_used = feas.lower_cost
        report.lambda_star = INF
        return report
    if case == 3:
        report.classification = "infinite"
        report.optimal_value = INF
        report.witness = _infinite_witness(p, feas.lower_cost)
        return report
    if feas.status == "bliss":
        mean_xi = p.expect(lambda w: p.xi(w))
        shift = (p.x0 - feas.upper_cost) / mean_xi
        report.classification = "bliss"
        report.solution = ShiftedMapSolution(p.bliss_map, shift, "bliss")
        report.optimal_value = p.value(report.solution)
        report.budget_used = p.x0
        report.lambda_star = 0.0
        return report

    G = GFunction(p)
    if case == 2:
        g0 = G(lam0)
        if g0 <= p.x0 + p.budget_tol:
            theta = G.upper(lam0)
            if p.x0 > theta + p.budget_tol:
                return _unattainable(p, lam0, theta, report)
            return _finalize(p, _resolve_jump(p, lam0, report, G))
    lo, hi = _bracket(p, G, case, lam0)
    continuous = not any(lo <= c <= hi for c, _, _ in jump_candidates(p))
    if continuous and math.isfinite(G(lo)) and not (p.engine.is_monte_carlo and not p.dist.is_discrete):
        # no jump inside the bracket: g is continuous there
        lam = brentq(lambda v: G(v) - p.x0, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=200)
        if _accept(p, G(lam), lam):
            lo = hi = lam
        else:
            lo, hi = _bisect(G, p.x0, lo, hi)
    else:
        lo, hi = _bisect(G, p.x0, lo, hi)
    g_hi = G(hi)
    if _accept(p, g_hi, hi):
        report.lambda_star = hi
        report.classification = "unique"
        report.solution = SelectionSolution(p, hi, "min")
        report.optimal_value = eval_J(p, hi)
        report.budget_used = g_hi
        return _finalize(p, report)
    cands = [c for c, _, _ in jump_candidates(p) if abs(c - hi) <= _SNAP_REL * hi + (hi - lo)]
    if not cands:
        raise NumericalBracketFailure(f"g jumps across x0 near lambda={hi} but no jump slope is hit there")
    lam = min(cands, key=lambda c: abs(c - hi))
    return _finalize(p, _resolve_jump(p, lam, report, G))


def _finalize(p: Problem, report: SolveReport) -> SolveReport:
    if report.optimal_value is not None and report.optimal_value == INF:
        report.classification = "infinite"
        report.notes.append("J(lambda*) is infinite")
    return report


# ---------------------------------------------------------------- diagnostics


def check_case1_sufficient(p: Problem) -> tuple[bool, str]:
    """Moment conditions under which a growth-bounded family gives case 1 and a finite value."""
    if p.family.witness is None:
        return False, "family has no growth witness (tail not dominated by u1 + u2 x^delta with delta < 1)"
    if any(r.env.tail_slope > 0 for r in p.regions if r.prob > 0):
        return False, "affine tail: no delta < 1 dominates"
    wit = [p.family.witness(r.b) for r in p.regions]
    if not all(0 < wt.delta < 1 for wt in wit):
        return False, "witness exponent outside (0, 1)"

    def pick(attr):
        vals = np.array([getattr(wt, attr) for wt in wit])
        return lambda w: vals[p.region_of(w)]

    u1, u2, K, th, gam = pick("u1"), pick("u2"), pick("K"), pick("theta"), pick("gamma")
    delta = wit[0].delta
    e = delta / (1.0 - delta)
    moments = {
        "E[xi]": lambda w: p.xi(w),
        "E[xi^(-d/(1-d)) u2^(1/(1-d))]": lambda w: p.xi(w) ** (-e) * np.abs(u2(w)) ** (1.0 / (1.0 - delta)),
        "E[xi (K + lower + theta)]": lambda w: p.xi(w) * np.abs(K(w) + p.lower_map(w) + th(w)),
        "E[|u1|]": lambda w: np.abs(u1(w)),
        "E[|gamma|]": lambda w: np.abs(gam(w)),
    }
    for name, f in moments.items():
        if not _finite_moment(p, f):
            return False, f"{name} diverges"
    return True, "all moment conditions hold"


def _finite_moment(p: Problem, f) -> bool:
    """Finite and stable under truncating ``xi`` away from 0 and infinity."""
    vals = []
    for eps in (1e-6, 1e-9, 1e-12):
        lo_lvl, hi_lvl = eps, 1.0 / eps
        splits = p.kernel.crossings(lo_lvl, -INF, INF) + p.kernel.crossings(hi_lvl, -INF, INF)

        def g(w, lo_lvl=lo_lvl, hi_lvl=hi_lvl):
            x = p.xi(w)
            with np.errstate(all="ignore"):
                v = f(w)
            return np.where((x >= lo_lvl) & (x <= hi_lvl), np.nan_to_num(v, nan=0.0, posinf=1e300), 0.0)

        v = p.expect(g, splits)
        if not math.isfinite(v):
            return False
        vals.append(v)
    return abs(vals[-1] - vals[-2]) <= 1e-3 * max(1.0, abs(vals[-1]))


def lagrangian_gap(p: Problem, lam: float, X: Solution, w_nodes, grid) -> float:
    """Largest violation of ``U(X) - lam xi X >= U(x) - lam xi x`` over nodes and a wealth grid."""
    w = np.asarray(w_nodes, dtype=float)
    xs = X(w)
    xi = p.xi(w)
    lhs = p.utility_at(w, xs) - lam * xi * xs
    worst = -INF
    for x in grid:
        rhs = p.utility_at(w, np.full(w.shape, x)) - lam * xi * x
        with np.errstate(invalid="ignore"):
            d = np.where(np.isfinite(rhs), rhs - lhs, -INF)
        worst = max(worst, float(np.max(d)))
    return worst
