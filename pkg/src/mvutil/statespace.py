"""Market state, pricing kernel, benchmark maps and the expectation engine.

Everything random in the package is a function of one scalar state ``W``.
Expectations are taken by per-panel Gauss quadrature (deterministic) or by
seeded Monte Carlo, with panels cut at declared breakpoints of the
integrand so that jumps never sit inside a panel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import UndefinedExpectation

INF = math.inf

# Normal panels are truncated here; phi(38) is ~1e-314, far below any tolerance.
_NORMAL_CUTOFF = 38.0
_NORMAL_INNER_CUTS = (-8.0, 8.0)


# ---------------------------------------------------------------- distribution


@dataclass(frozen=True)
class StateDistribution:
    """Law of the scalar market state ``W``.

    Use the constructors :meth:`standard_normal`, :meth:`uniform` and
    :meth:`discrete` rather than the raw fields.
    """

    kind: str
    lo: float = -INF
    hi: float = INF
    atoms: tuple[tuple[float, float], ...] = ()

    @classmethod
    def standard_normal(cls) -> "StateDistribution":
        return cls("standard-normal")

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "StateDistribution":
        lo, hi = float(lo), float(hi)
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise ValueError(f"uniform state needs finite lo < hi, got ({lo}, {hi})")
        return cls("uniform", lo, hi)

    @classmethod
    def discrete(cls, atoms: Iterable[Sequence[float]]) -> "StateDistribution":
        merged: dict[float, float] = {}
        for value, prob in atoms:
            value, prob = float(value), float(prob)
            if not math.isfinite(value):
                raise ValueError("discrete atoms must be finite")
            if not prob > 0.0:
                raise ValueError(f"atom probabilities must be positive, got {prob}")
            merged[value] = merged.get(value, 0.0) + prob
        if not merged:
            raise ValueError("discrete state needs at least one atom")
        total = sum(merged.values())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"atom probabilities sum to {total!r}, not 1")
        ordered = tuple(sorted(merged.items()))
        return cls("discrete", ordered[0][0], ordered[-1][0], ordered)

    @property
    def is_discrete(self) -> bool:
        return self.kind == "discrete"

    def support(self) -> tuple[float, float]:
        return self.lo, self.hi

    def atom_values(self) -> np.ndarray:
        return np.array([a[0] for a in self.atoms], dtype=float)

    def atom_probs(self) -> np.ndarray:
        return np.array([a[1] for a in self.atoms], dtype=float)

    def cdf(self, w: float) -> float:
        """``P[W < w]``. For atoms the mass at ``w`` itself is excluded."""
        if self.kind == "standard-normal":
            return float(ndtr(w)) if math.isfinite(w) else float(w > 0)
        if self.kind == "uniform":
            return min(1.0, max(0.0, (w - self.lo) / (self.hi - self.lo)))
        return float(sum(p for v, p in self.atoms if v < w))

    def prob(self, lo: float, hi: float) -> float:
        """``P[lo <= W < hi]``."""
        if hi <= lo:
            return 0.0
        if self.kind == "discrete":
            return float(sum(p for v, p in self.atoms if lo <= v < hi))
        return max(0.0, self.cdf(hi) - self.cdf(lo))

    def sample(self, n: int, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        if self.kind == "standard-normal":
            return rng.standard_normal(n)
        if self.kind == "uniform":
            return rng.uniform(self.lo, self.hi, n)
        idx = rng.choice(len(self.atoms), size=n, p=self.atom_probs())
        return self.atom_values()[idx]


# ---------------------------------------------------------------- kernel


@dataclass(frozen=True)
class PricingKernel:
    """State-price density ``xi(w) > 0``.

    ``lognormal`` uses ``xi(w) = exp(-(r + theta^2/2) T - theta sqrt(T) w)``.
    ``explicit-map`` is piecewise affine: each piece ``(lo, hi, a, s)`` gives
    ``xi(w) = a + s w`` on ``[lo, hi)``.  ``identity`` is ``xi(w) = w``.
    """

    form: str
    r: float = 0.0
    theta: float = 0.0
    T: float = 0.0
    pieces: tuple[tuple[float, float, float, float], ...] = ()

    @classmethod
    def lognormal(cls, r: float, theta: float, T: float) -> "PricingKernel":
        if T <= 0:
            raise ValueError("lognormal kernel needs T > 0")
        return cls("lognormal", float(r), float(theta), float(T))

    @classmethod
    def identity(cls) -> "PricingKernel":
        return cls("identity", pieces=((-INF, INF, 0.0, 1.0),))

    @classmethod
    def explicit(cls, pieces: Iterable[Sequence[float]]) -> "PricingKernel":
        ps = tuple(sorted(tuple(float(v) for v in piece) for piece in pieces))
        if not ps:
            raise ValueError("explicit-map kernel needs at least one piece")
        for (lo, hi, _, _), nxt in zip(ps, ps[1:] + ((INF, INF, 0, 0),)):
            if not lo < hi:
                raise ValueError(f"kernel piece [{lo}, {hi}) is empty")
            if nxt[0] != INF and nxt[0] != hi:
                raise ValueError("explicit-map pieces must tile an interval")
        return cls("explicit-map", pieces=ps)

    @classmethod
    def constant(cls, value: float = 1.0) -> "PricingKernel":
        return cls.explicit([(-INF, INF, value, 0.0)])

    # lognormal helpers
    @property
    def _log_intercept(self) -> float:
        return -(self.r + 0.5 * self.theta**2) * self.T

    @property
    def _log_slope(self) -> float:
        return self.theta * math.sqrt(self.T)

    def __call__(self, w):
        w = np.asarray(w, dtype=float)
        if self.form == "lognormal":
            return np.exp(self._log_intercept - self._log_slope * w)
        out = np.full(w.shape, np.nan)
        for lo, hi, a, s in self.pieces:
            m = (w >= lo) & (w < hi)
            out[m] = a + s * w[m]
        return out

    def validate_on(self, dist: StateDistribution) -> None:
        lo, hi = dist.support()
        if dist.is_discrete:
            vals = self(dist.atom_values())
            if not np.all(np.isfinite(vals) & (vals > 0)):
                raise ValueError("pricing kernel must be positive at every atom")
            return
        if self.form == "lognormal":
            return
        covered = [(max(a, lo), min(b, hi)) for a, b, _, _ in self.pieces if min(b, hi) > max(a, lo)]
        if not covered or covered[0][0] > lo or covered[-1][1] < hi:
            raise ValueError("explicit-map kernel does not cover the state support")
        inf_, _ = self.range_on(lo, hi)
        if not inf_ >= 0.0:
            raise ValueError("pricing kernel must be positive on the support")
        for a, b, c, s in self.pieces:
            a, b = max(a, lo), min(b, hi)
            if b > a and s == 0.0 and c <= 0.0:
                raise ValueError("pricing kernel must be positive on the support")

    def _affine_parts(self, lo: float, hi: float):
        """Pieces ``(a, b, intercept, slope)`` clipped to ``[lo, hi]``."""
        if self.form == "lognormal":
            raise TypeError("lognormal kernel has no affine parts")
        for a, b, c, s in self.pieces:
            a2, b2 = max(a, lo), min(b, hi)
            if b2 > a2:
                yield a2, b2, c, s

    def range_on(self, lo: float, hi: float) -> tuple[float, float]:
        """Infimum and supremum of ``xi`` over the closure of ``[lo, hi)``."""
        if self.form == "lognormal":
            if self._log_slope == 0.0:
                v = math.exp(self._log_intercept)
                return v, v
            with np.errstate(over="ignore"):
                ends = self(np.array([lo, hi]))
            return float(ends.min()), float(ends.max())
        lows, highs = [], []
        for a, b, c, s in self._affine_parts(lo, hi):
            for x in (a, b):
                if math.isfinite(x):
                    v = c + s * x
                elif s == 0.0:
                    v = c
                else:
                    v = INF if (s > 0) == (x > 0) else -INF
                lows.append(v)
                highs.append(v)
        return min(lows), max(highs)

    def crossings(self, level: float, lo: float, hi: float) -> list[float]:
        """States ``w`` in ``(lo, hi)`` where ``xi(w) = level`` at an isolated point."""
        out: list[float] = []
        if not (level > 0 and math.isfinite(level)):
            return out
        if self.form == "lognormal":
            c = self._log_slope
            if c != 0.0:
                w = (self._log_intercept - math.log(level)) / c
                if lo < w < hi:
                    out.append(w)
            return out
        for a, b, c, s in self._affine_parts(lo, hi):
            if s != 0.0:
                w = (level - c) / s
                if a < w < b and lo < w < hi:
                    out.append(w)
        return sorted(out)

    def flat_parts(self, lo: float, hi: float) -> list[tuple[float, float, float]]:
        """Intervals of positive length inside ``[lo, hi)`` on which ``xi`` is constant."""
        if self.form == "lognormal":
            if self._log_slope == 0.0:
                return [(lo, hi, math.exp(self._log_intercept))]
            return []
        return [(a, b, c) for a, b, c, s in self._affine_parts(lo, hi) if s == 0.0]

    def below(self, level: float, lo: float, hi: float) -> list[tuple[float, float]]:
        """Intervals of ``[lo, hi)`` on which ``xi(w) < level``."""
        if level <= 0:
            return []
        if self.form == "lognormal":
            c = self._log_slope
            if c == 0.0:
                return [(lo, hi)] if math.exp(self._log_intercept) < level else []
            if level == INF:
                return [(lo, hi)]
            w = (self._log_intercept - math.log(level)) / c
            if c > 0:
                return [(max(lo, w), hi)] if max(lo, w) < hi else []
            return [(lo, min(hi, w))] if lo < min(hi, w) else []
        out = []
        for a, b, c, s in self._affine_parts(lo, hi):
            if s == 0.0:
                if c < level:
                    out.append((a, b))
                continue
            if level == INF:
                out.append((a, b))
                continue
            w = (level - c) / s
            seg = (a, min(b, w)) if s > 0 else (max(a, w), b)
            if seg[1] > seg[0]:
                out.append(seg)
        return out


# ---------------------------------------------------------------- benchmark


@dataclass(frozen=True)
class BenchmarkMap:
    """Piecewise-constant benchmark ``w -> B(w)``, a tuple of reals.

    ``values[j]`` applies on ``[breakpoints[j-1], breakpoints[j])`` with the
    outer ends at -inf and +inf.  A scalar benchmark is a 1-tuple.
    """

    breakpoints: tuple[float, ...]
    values: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        bps = self.breakpoints
        if any(not b2 > b1 for b1, b2 in zip(bps, bps[1:])):
            raise ValueError("benchmark breakpoints must be strictly increasing")
        if len(self.values) != len(bps) + 1:
            raise ValueError("benchmark needs one value per region")
        dims = {len(v) for v in self.values}
        if len(dims) != 1:
            raise ValueError("benchmark values must share one dimension")

    @classmethod
    def constant(cls, *b: float) -> "BenchmarkMap":
        return cls((), (tuple(float(v) for v in b),))

    @classmethod
    def from_components(cls, components: Sequence[tuple[Sequence[float], Sequence[float]]]) -> "BenchmarkMap":
        """Combine scalar components ``(breakpoints, values)`` into one map."""
        comps = []
        for bps, vals in components:
            bps = tuple(float(b) for b in bps)
            vals = tuple(float(v) for v in vals)
            if len(vals) != len(bps) + 1:
                raise ValueError("each component needs one value per region")
            comps.append((bps, vals))
        merged = sorted({b for bps, _ in comps for b in bps})
        reps = _region_representatives(merged)
        values = []
        for w in reps:
            values.append(tuple(vals[int(np.searchsorted(bps, w, side="right"))] for bps, vals in comps))
        # drop breakpoints across which nothing changes
        keep_bps, keep_vals = [], [values[0]]
        for b, v in zip(merged, values[1:]):
            if v != keep_vals[-1]:
                keep_bps.append(b)
                keep_vals.append(v)
        return cls(tuple(keep_bps), tuple(keep_vals))

    @property
    def dim(self) -> int:
        return len(self.values[0])

    def regions(self) -> list[tuple[float, float, tuple[float, ...]]]:
        edges = (-INF,) + self.breakpoints + (INF,)
        return [(edges[j], edges[j + 1], self.values[j]) for j in range(len(self.values))]

    def region_index(self, w) -> np.ndarray:
        return np.searchsorted(np.asarray(self.breakpoints, dtype=float), np.asarray(w, dtype=float), side="right")

    def distinct_values(self) -> list[tuple[float, ...]]:
        seen = []
        for v in self.values:
            if v not in seen:
                seen.append(v)
        return seen


def _region_representatives(bps: Sequence[float]) -> list[float]:
    if not bps:
        return [0.0]
    reps = [bps[0] - 1.0]
    reps += [0.5 * (a + b) for a, b in zip(bps, bps[1:])]
    reps.append(bps[-1] + 1.0)
    return reps


# ---------------------------------------------------------------- engine


@lru_cache(maxsize=16)
def _legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(n)


@lru_cache(maxsize=16)
def _hermite_prob(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.hermite.hermgauss(n)
    return x * math.sqrt(2.0), w / math.sqrt(math.pi)


@lru_cache(maxsize=32)
def _mc_samples(dist: StateDistribution, n: int, seed: int) -> np.ndarray:
    s = dist.sample(n, seed)
    s.setflags(write=False)
    return s


def _reduce(values: np.ndarray, weights: np.ndarray) -> float:
    values = np.asarray(values, dtype=float)
    if np.isnan(values).any():
        raise ValueError("integrand returned NaN")
    live = weights > 0.0
    pos = bool(np.any(live & (values == INF)))
    neg = bool(np.any(live & (values == -INF)))
    if pos and neg:
        raise UndefinedExpectation("both +inf and -inf carry positive weight")
    if pos:
        return INF
    if neg:
        return -INF
    fin = np.where(live, values, 0.0)
    return float(np.dot(weights, fin))


@dataclass(frozen=True)
class ExpectationEngine:
    """Deterministic expectation operator.

    ``mode="quadrature"`` uses ``nodes`` Gauss points per panel;
    ``mode="monte-carlo"`` averages ``samples`` draws from ``seed``.  Discrete
    states are always summed exactly.
    """

    mode: str = "quadrature"
    nodes: int = 256
    samples: int = 200_000
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("quadrature", "monte-carlo"):
            raise ValueError(f"unknown engine mode {self.mode!r}")
        if self.nodes < 2 or self.samples < 2:
            raise ValueError("engine needs at least two nodes/samples")

    @property
    def is_monte_carlo(self) -> bool:
        return self.mode == "monte-carlo"

    def nodes_and_weights(self, dist: StateDistribution, splits: Iterable[float] = ()) -> tuple[np.ndarray, np.ndarray, list[float]]:
        """Quadrature nodes, weights, and tail probe points for ``dist``."""
        if dist.is_discrete:
            return dist.atom_values(), dist.atom_probs(), []
        if self.is_monte_carlo:
            s = _mc_samples(dist, self.samples, self.seed)
            return s, np.full(s.shape, 1.0 / s.size), []
        lo, hi = dist.support()
        cuts = sorted({float(s) for s in splits if math.isfinite(s) and lo < s < hi})
        gx, gw = _legendre(self.nodes)
        if dist.kind == "uniform":
            edges = [lo] + cuts + [hi]
            xs, ws = [], []
            dens = 1.0 / (hi - lo)
            for a, b in zip(edges, edges[1:]):
                half = 0.5 * (b - a)
                xs.append(0.5 * (a + b) + half * gx)
                ws.append(half * gw * dens)
            return np.concatenate(xs), np.concatenate(ws), []
        if not cuts:
            hx, hw = _hermite_prob(self.nodes)
            return hx, hw, []
        L = _NORMAL_CUTOFF
        edges = sorted(set([-L, L] + [c for c in cuts if -L < c < L] + [c for c in _NORMAL_INNER_CUTS]))
        xs, ws = [], []
        for a, b in zip(edges, edges[1:]):
            half = 0.5 * (b - a)
            x = 0.5 * (a + b) + half * gx
            xs.append(x)
            ws.append(half * gw * np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi))
        # Panels reaching past the cutoff carry negligible mass but may be infinite.
        probes = []
        full = [-INF] + cuts + [INF]
        for a, b in zip(full, full[1:]):
            if a < -L or b > L:
                if a == -INF:
                    probes.append(min(b, -L) - 1.0)
                elif b == INF:
                    probes.append(max(a, L) + 1.0)
                else:
                    probes.append(0.5 * (a + b))
        return np.concatenate(xs), np.concatenate(ws), probes

    def expect(self, dist: StateDistribution, f: Callable[[np.ndarray], np.ndarray], splits: Iterable[float] = ()) -> float:
        x, w, probes = self.nodes_and_weights(dist, splits)
        vals = np.asarray(f(x), dtype=float)
        if probes:
            pv = np.asarray(f(np.asarray(probes, dtype=float)), dtype=float)
            # a probe stands for a region of positive probability
            vals = np.concatenate([vals, pv])
            w = np.concatenate([w, np.full(pv.shape, np.finfo(float).tiny)])
        return _reduce(vals, w)

    def expect_with_error(self, dist: StateDistribution, f: Callable[[np.ndarray], np.ndarray], splits: Iterable[float] = ()) -> tuple[float, float]:
        """Expectation and its standard error (zero outside Monte Carlo)."""
        mean = self.expect(dist, f, splits)
        if not (self.is_monte_carlo and not dist.is_discrete and math.isfinite(mean)):
            return mean, 0.0
        s = _mc_samples(dist, self.samples, self.seed)
        v = np.asarray(f(s), dtype=float)
        return mean, float(np.std(v, ddof=1) / math.sqrt(v.size))


def expect(engine: ExpectationEngine, dist: StateDistribution, f: Callable[[np.ndarray], np.ndarray], splits: Iterable[float] = ()) -> float:
    """Extended-real expectation ``E[f(W)]``; see :class:`ExpectationEngine`."""
    return engine.expect(dist, f, splits)


def kernel_essential_bounds(kernel: PricingKernel, dist: StateDistribution) -> tuple[float, float, float]:
    """Essential infimum and supremum of ``xi(W)`` and the mass at the infimum."""
    if dist.is_discrete:
        xi = kernel(dist.atom_values())
        lo, hi = float(xi.min()), float(xi.max())
        mass = float(dist.atom_probs()[np.abs(xi - lo) <= 1e-12 * max(1.0, lo)].sum())
        return lo, hi, mass
    a, b = dist.support()
    lo, hi = kernel.range_on(a, b)
    mass = sum(dist.prob(s, e) for s, e, v in kernel.flat_parts(a, b) if abs(v - lo) <= 1e-12 * max(1.0, lo))
    return lo, hi, float(mass)


@dataclass(frozen=True)
class StateModel:
    """Distribution, kernel and engine bundled together."""

    dist: StateDistribution
    kernel: PricingKernel
    engine: ExpectationEngine = field(default_factory=ExpectationEngine)

    def __post_init__(self):
        self.kernel.validate_on(self.dist)

    def expect(self, f, splits=()) -> float:
        return self.engine.expect(self.dist, f, splits)
