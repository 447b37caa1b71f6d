"""S-shaped utility with a Value-at-Risk floor.

The probability constraint ``P[X >= B2] >= 1 - alpha`` is priced by a reward
``mu`` for reaching ``B2``.  For fixed ``mu`` the problem is a benchmark
problem with utility ``U(x, b1) + mu 1{x >= b2}``; the outer search picks
the smallest ``mu`` that makes the constraint bind.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import ConstraintUnreachable, MvutilError, RegimeViolation
from .solver import Problem, SolveReport, solve
from .statespace import BenchmarkMap, ExpectationEngine, PricingKernel, StateDistribution, StateModel
from .utility import GrowthWitness, UtilityFamily, s_shaped_family, s_shaped_with_floor

INF = math.inf


class NonMonotoneConstraint(MvutilError):
    """The constraint probability is not monotone over the pre-scan in mu."""


# ---------------------------------------------------------------- closed forms


def d(s: float, p: float) -> float:
    """Positive root of ``1 + s x^p = p (x + 1)``."""
    if s < 0 or not 0 < p < 1:
        raise ValueError("d(s) needs s >= 0 and 0 < p < 1")

    def r(x):
        return p * (x + 1.0) - 1.0 - s * x**p

    def dr(x):
        return p - s * p * x ** (p - 1.0)

    hi = max(1.0, 1.0 / p)
    while r(hi) <= 0:
        hi *= 2.0
    lo = 0.0
    x = hi
    # r is convex on (0, inf), so Newton from the right stays to the right of the root
    for _ in range(200):
        fx = r(x)
        if abs(fx) <= 1e-14 * max(1.0, p * x):
            break
        if fx > 0:
            hi = x
        else:
            lo = x
        step = x - fx / dr(x)
        x = step if lo < step < hi else 0.5 * (lo + hi)
        if hi - lo <= 1e-15 * hi:
            break
    return x


@dataclass(frozen=True)
class RegimeThresholds:
    y1: float
    y2_mu: float
    y3_mu: float
    d_k: float
    d_kmu: float

    @property
    def regime(self) -> int:
        return 1 if self.y1 <= self.y2_mu else 2

    @property
    def floor_threshold(self) -> float:
        """Below this slope the selection reaches ``b2``."""
        return self.y2_mu if self.regime == 1 else self.y3_mu


def thresholds(p: float, k: float, mu: float, b: tuple[float, float]) -> RegimeThresholds:
    b1, b2 = float(b[0]), float(b[1])
    if not b1 > b2:
        raise RegimeViolation(f"closed form needs b1 > b2, got {b}")
    if not b2 > 0:
        raise RegimeViolation(f"closed form needs b2 > 0, got {b}")
    dk = d(k, p)
    dkm = d(k + mu * b1 ** (-p), p)
    y1 = p * (dk / (b1 - b2)) ** (1.0 - p)
    y2 = (mu + k * b1**p - k * (b1 - b2) ** p) / b2
    y3 = p * (dkm / b1) ** (1.0 - p)
    return RegimeThresholds(y1, y2, y3, dk, dkm)


def closed_form_selection(scenario, mu: float, b, y):
    """Smallest maximizer of ``U(x, b1) + mu 1{x >= b2} - y x`` from the closed form."""
    p, k = scenario.p, scenario.k
    th = thresholds(p, k, mu, b)
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise ValueError("closed form needs y > 0")
    b1, b2 = float(b[0]), float(b[1])
    with np.errstate(over="ignore"):
        curve = b1 + (p / y) ** (1.0 / (1.0 - p))
    if th.regime == 1:
        out = np.where(y < th.y1, curve, np.where(y < th.y2_mu, b2, 0.0))
    else:
        out = np.where(y < th.y3_mu, curve, 0.0)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- families


def modified_utility(p: float, k: float, mu: float) -> UtilityFamily:
    """Family ``b -> U(., b1) + mu 1{. >= b2}`` on ``[0, inf)``."""
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    if mu == 0:
        base = s_shaped_family(p, k)
        return UtilityFamily(
            "s-shaped-floor",
            lambda b: base.template((b[0],)),
            (("p", p), ("k", k), ("mu", 0.0)),
            witness=lambda b: GrowthWitness(0.0, 1.0, 0.0, p, b[0], 0.0),
            benchmark_dim=2,
        )
    return UtilityFamily(
        "s-shaped-floor",
        lambda b: s_shaped_with_floor(b[0], b[1], mu, p, k),
        (("p", p), ("k", k), ("mu", float(mu))),
        witness=lambda b: GrowthWitness(mu, 1.0, 0.0, p, b[0], mu * (b[0] >= b[1])),
        benchmark_dim=2,
    )


# ---------------------------------------------------------------- scenario


@dataclass(frozen=True)
class VarScenario:
    p: float = 0.5
    k: float = 2.25
    r: float = 0.03
    theta: float = 0.3
    T: float = 10.0
    x0: float = 30.0
    plan: str = "II"
    L1: float = 60.0
    L2: float = 70.0
    L3: float = 40.0
    L4: float = 50.0
    w: float = -1.0
    alpha: float = 0.05

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise ValueError("p must lie in (0, 1)")
        if not self.k > 0:
            raise ValueError("k must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.plan not in ("I", "II", "III"):
            raise ValueError(f"unknown plan {self.plan!r}")
        if not (self.L1 > self.L3 and self.L2 > self.L4):
            raise ValueError("need L1 > L3 and L2 > L4")

    def benchmark(self) -> BenchmarkMap:
        lo = (self.L1, self.L3)
        if self.plan == "I":
            return BenchmarkMap.constant(*lo)
        hi = (self.L1, self.L4) if self.plan == "II" else (self.L2, self.L4)
        return BenchmarkMap((self.w,), (lo, hi))

    def model(self, engine: ExpectationEngine | None = None) -> StateModel:
        return StateModel(
            StateDistribution.standard_normal(),
            PricingKernel.lognormal(self.r, self.theta, self.T),
            engine or ExpectationEngine(),
        )

    def problem(self, mu: float, engine: ExpectationEngine | None = None) -> Problem:
        return Problem(self.model(engine), modified_utility(self.p, self.k, mu), self.benchmark(), self.x0)

    @property
    def mu_cap(self) -> float:
        return 1e6 * self.k * self.L1**self.p


# ---------------------------------------------------------------- solve


def floor_probability(scn: VarScenario, mu: float, lam: float, engine: ExpectationEngine | None = None) -> float:
    """``P[X >= B2]`` for ``X = X_min(lam xi)`` from the slope thresholds."""
    model = scn.model(engine)
    dist, ker = model.dist, model.kernel
    total = 0.0
    for lo, hi, b in scn.benchmark().regions():
        thr = thresholds(scn.p, scn.k, mu, b).floor_threshold
        for a, c in ker.below(thr / lam, lo, hi):
            total += dist.prob(a, c)
    return total


def level_probability(scn: VarScenario, mu: float, lam: float, level: float) -> float:
    """``P[X >= level]`` for the closed-form selection, via a scan of state thresholds."""
    model = scn.model()
    total = 0.0
    for lo, hi, b in scn.benchmark().regions():
        a, c = max(lo, -40.0), min(hi, 40.0)
        ws = np.linspace(a, c, 200001)
        x = closed_form_selection(scn, mu, b, lam * model.kernel(ws))
        ok = x >= level
        total += _mass_of_mask(model.dist, ws, ok, lo, hi)
    return total


def _mass_of_mask(dist: StateDistribution, ws: np.ndarray, ok: np.ndarray, lo: float = -INF, hi: float = INF) -> float:
    """Probability of the grid runs where ``ok`` holds; runs end at midpoints or at ``lo``/``hi``."""
    if not ok.any():
        return 0.0
    edges = np.concatenate([[ws[0]], 0.5 * (ws[1:] + ws[:-1]), [ws[-1]]])
    d_ok = np.diff(np.concatenate([[0], ok.astype(int), [0]]))
    starts = np.nonzero(d_ok == 1)[0]
    stops = np.nonzero(d_ok == -1)[0]
    total = 0.0
    for s, e in zip(starts, stops):
        a = lo if s == 0 else edges[s]
        b = hi if e == len(ws) else edges[e]
        total += dist.prob(a, b)
    return total


@dataclass
class VarResult:
    scenario: VarScenario
    mu_star: float
    lambda_star: float
    report: SolveReport
    prob_floor: float
    scan: list[tuple[float, float]] = field(default_factory=list)

    def x_star(self, w):
        return self.report.solution(w)

    def to_dict(self) -> dict:
        d = self.report.to_dict()
        d["mu_star"] = self.mu_star
        d["prob_floor"] = self.prob_floor
        d["plan"] = self.scenario.plan
        d["mu_scan"] = [[m, pr] for m, pr in self.scan]
        return d


def _inner(scn: VarScenario, mu: float, engine) -> tuple[SolveReport, float]:
    rep = solve(scn.problem(mu, engine))
    if rep.classification != "unique" or rep.lambda_star is None:
        raise MvutilError(f"inner problem at mu={mu} is {rep.classification}, expected a unique solution")
    return rep, rep.lambda_star


def var_solve(scn: VarScenario, engine: ExpectationEngine | None = None, tol: float = 1e-10) -> VarResult:
    """Find ``mu*`` with ``P[X^mu >= B2] = 1 - alpha`` and return the solution at ``mu*``."""
    target = 1.0 - scn.alpha
    cache: dict[float, tuple[SolveReport, float]] = {}

    def prob(mu: float) -> float:
        if mu not in cache:
            rep, lam = _inner(scn, mu, engine)
            cache[mu] = (rep, floor_probability(scn, mu, lam, engine))
        return cache[mu][1]

    def finish(mu: float, scan) -> VarResult:
        rep, pr = cache[mu]
        rep.mu_star = mu
        rep.extras["prob_floor"] = pr
        return VarResult(scn, mu, rep.lambda_star, rep, pr, scan)

    if prob(0.0) >= target:
        return finish(0.0, [(0.0, cache[0.0][1])])
    grid = [0.0] + list(np.geomspace(1e-3, scn.mu_cap, 19))
    scan = [(m, prob(m)) for m in grid]
    for (m1, p1), (m2, p2) in zip(scan, scan[1:]):
        if p2 < p1 - 1e-9:
            raise NonMonotoneConstraint(f"P[X >= B2] decreases from {p1} to {p2} between mu={m1} and mu={m2}")
    hit = next((i for i, (_, pr) in enumerate(scan) if pr >= target), None)
    if hit is None:
        raise ConstraintUnreachable(
            f"P[X >= B2] reaches only {scan[-1][1]:.6f} < {target} at the mu cap {scn.mu_cap:g}"
        )
    lo, hi = scan[hit - 1][0], scan[hit][0]
    mu = brentq(lambda m: prob(m) - target, lo, hi, xtol=1e-12 * max(1.0, hi), rtol=1e-14, maxiter=200)
    if abs(prob(mu) - target) > tol:
        # the probability can jump in mu; take the smallest mu on the feasible side
        a, b = lo, hi
        for _ in range(200):
            m = 0.5 * (a + b)
            if prob(m) >= target:
                b = m
            else:
                a = m
            if b - a <= 1e-13 * b:
                break
        mu = b
    return finish(mu, scan)


# ---------------------------------------------------------------- plan comparison


def solution_curve(res: VarResult, ws) -> tuple[np.ndarray, np.ndarray]:
    """``(xi, X*)`` along the given states."""
    ws = np.asarray(ws, dtype=float)
    model = res.scenario.model()
    return model.kernel(ws), res.x_star(ws)


@dataclass(frozen=True)
class Region:
    xi_lo: float
    xi_hi: float
    prob: float


def dominance_regions(a: VarResult, b: VarResult, others: tuple[VarResult, ...] = (), lo: float = -10.0,
                      hi: float = 10.0, n: int = 400001, tol: float = 1e-9) -> list[Region]:
    """Intervals of ``xi`` on which ``a`` pays strictly more than ``b`` (and every result in ``others``)."""
    ws = np.linspace(lo, hi, n)
    xa = a.x_star(ws)
    ok = xa > b.x_star(ws) + tol
    for o in others:
        ok &= xa > o.x_star(ws) + tol
    model = a.scenario.model()
    xi = model.kernel(ws)
    out = []
    if not ok.any():
        return out
    d_ok = np.diff(np.concatenate([[0], ok.astype(int), [0]]))
    starts = np.nonzero(d_ok == 1)[0]
    stops = np.nonzero(d_ok == -1)[0]
    edges = np.concatenate([[ws[0]], 0.5 * (ws[1:] + ws[:-1]), [ws[-1]]])
    for s, e in zip(starts, stops):
        w_lo = -INF if s == 0 else edges[s]
        w_hi = INF if e == len(ws) else edges[e]
        pr = model.dist.prob(w_lo, w_hi)
        x1, x2 = float(model.kernel(w_lo)), float(model.kernel(w_hi))
        out.append(Region(min(x1, x2), max(x1, x2), pr))
    return out


def xi_probability(scn: VarScenario, xi_lo: float, xi_hi: float) -> float:
    """``P[xi_lo < xi < xi_hi]`` under the scenario's market."""
    model = scn.model()
    dist, ker = model.dist, model.kernel
    total = 0.0
    for a, c in ker.below(xi_hi, -INF, INF):
        total += dist.prob(a, c)
    for a, c in ker.below(xi_lo, -INF, INF):
        total -= dist.prob(a, c)
    return max(0.0, total)
