"""Piecewise utilities U(., b) and the parametric families built from them.

A utility is a list of pieces tiling ``[lower, +inf)``.  Each piece is one of

* ``constant``    c
* ``affine``      k x + c                (k >= 0)
* ``power-up``    k (x - s)^p + c        (concave, s <= lo)
* ``power-down``  -k (s - x)^p + c       (convex,  s >= hi)
* ``log``         k log(x - s) + c       (concave, s <= lo)

Values at a breakpoint come from the piece on the right, which makes the
function right-continuous.  A jump upward is encoded by a larger value at
the start of the next piece.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import RejectUnbounded

INF = math.inf
FORMS = ("constant", "affine", "power-up", "power-down", "log")

# relative tolerance used to compare values of U at breakpoints
_JOIN_TOL = 1e-12


@dataclass(frozen=True)
class Piece:
    form: str
    lo: float
    hi: float
    k: float = 0.0
    c: float = 0.0
    s: float = 0.0
    p: float = 1.0

    def __post_init__(self):
        if self.form not in FORMS:
            raise ValueError(f"unknown piece form {self.form!r}")
        if not self.lo < self.hi:
            raise ValueError(f"empty piece interval [{self.lo}, {self.hi})")
        if self.form == "affine" and self.k < 0:
            raise ValueError("affine pieces need slope k >= 0")
        if self.form in ("power-up", "power-down", "log") and not self.k > 0:
            raise ValueError(f"{self.form} pieces need k > 0")
        if self.form in ("power-up", "power-down") and not 0 < self.p < 1:
            raise ValueError(f"{self.form} pieces need 0 < p < 1")
        if self.form in ("power-up", "log") and self.s > self.lo:
            raise ValueError(f"{self.form} piece needs s <= lo")
        if self.form == "power-down" and self.s < self.hi:
            raise ValueError("power-down piece needs s >= hi")
        if self.form == "power-up" and self.lo == -INF:
            raise ValueError("power-up piece cannot extend to -inf")
        if self.form == "log" and self.lo == -INF:
            raise ValueError("log piece cannot extend to -inf")
        if self.form == "power-down" and self.hi == INF:
            raise ValueError("power-down piece cannot extend to +inf")

    @property
    def shape(self) -> str:
        """``linear``, ``concave`` or ``convex``."""
        if self.form in ("constant", "affine"):
            return "linear"
        return "convex" if self.form == "power-down" else "concave"

    @property
    def slope(self) -> float:
        return self.k if self.form == "affine" else 0.0

    def value(self, x):
        """Formula value; also valid at the closure point ``hi``."""
        x = np.asarray(x, dtype=float)
        f = self.form
        with np.errstate(divide="ignore", invalid="ignore"):
            if f == "constant":
                out = np.full(x.shape, self.c)
            elif f == "affine":
                out = self.k * x + self.c
            elif f == "power-up":
                out = self.k * np.power(np.maximum(x - self.s, 0.0), self.p) + self.c
            elif f == "power-down":
                out = -self.k * np.power(np.maximum(self.s - x, 0.0), self.p) + self.c
            else:
                out = self.k * np.log(np.maximum(x - self.s, 0.0)) + self.c
        if out.ndim == 0:
            return float(out)
        return out

    def deriv(self, x):
        x = np.asarray(x, dtype=float)
        f = self.form
        with np.errstate(divide="ignore", invalid="ignore"):
            if f in ("constant", "affine"):
                out = np.full(x.shape, self.slope)
            elif f == "power-up":
                out = self.k * self.p * np.power(np.maximum(x - self.s, 0.0), self.p - 1.0)
            elif f == "power-down":
                out = self.k * self.p * np.power(np.maximum(self.s - x, 0.0), self.p - 1.0)
            else:
                out = self.k / np.maximum(x - self.s, 0.0)
        if out.ndim == 0:
            return float(out)
        return out

    def limit_at(self, x: float) -> float:
        """Value with the infinite ends resolved as limits."""
        if x == INF:
            if self.form == "constant" or (self.form == "affine" and self.k == 0):
                return self.c
            return INF
        if x == -INF:
            if self.form == "constant" or (self.form == "affine" and self.k == 0):
                return self.c
            return -INF
        return self.value(x)

    def slope_at(self, x: float) -> float:
        """Derivative with the infinite ends resolved as limits."""
        if x == INF:
            return self.slope if self.shape == "linear" else 0.0
        if x == -INF:
            return self.slope if self.shape == "linear" else 0.0
        return self.deriv(x)

    def inverse_slope(self, y: float) -> float:
        """Point where a concave piece has derivative ``y`` (unclipped)."""
        if self.form == "power-up":
            if y == 0:
                return INF
            if y == INF:
                return self.s
            e = math.log(self.k * self.p / y) / (1.0 - self.p)
            return self.s + math.exp(e) if e < 709.0 else INF
        if self.form == "log":
            if y == 0:
                return INF
            if y == INF:
                return self.s
            return self.s + self.k / y
        raise TypeError(f"{self.form} piece has no slope inverse")

    def sup_minus_linear(self, sigma: float, a: float, b: float) -> tuple[float, list[tuple[float, float]]]:
        """Supremum of ``f(x) - sigma x`` over ``[a, b]`` and where it is attained.

        The argmax is a list of closed intervals (points have equal ends);
        an interval reaching ``+inf`` means the supremum is approached along
        the unbounded tail.  An empty list with a finite value means the
        supremum is a limit that is not attained.
        """
        if b < a:
            return -INF, []
        if self.shape == "linear":
            m = self.slope - sigma
            if abs(m) <= 1e-12 * max(1.0, abs(sigma)):
                return self.c, [(a, b)]
            end = b if m > 0 else a
            if math.isinf(end):
                return INF, []
            return self.value(end) - sigma * end, [(end, end)]
        if self.shape == "concave":
            x = min(max(self.inverse_slope(sigma), a), b)
            if x == INF:
                return INF, []
            return self.value(x) - sigma * x, [(x, x)]
        # convex: endpoints only
        cands = []
        for x in (a, b):
            if x == -INF:
                v = INF if sigma > 0 else -INF
                if v == INF:
                    return INF, []
                continue
            cands.append((self.value(x) - sigma * x, x))
        best = max(v for v, _ in cands)
        tol = 1e-13 * max(1.0, abs(best))
        return best, [(x, x) for v, x in cands if v >= best - tol]

    def to_dict(self) -> dict:
        d = {"form": self.form, "lo": self.lo, "hi": self.hi}
        if self.form == "constant":
            d["c"] = self.c
        elif self.form == "affine":
            d.update(k=self.k, c=self.c)
        elif self.form == "log":
            d.update(k=self.k, s=self.s, c=self.c)
        else:
            d.update(k=self.k, s=self.s, c=self.c, p=self.p)
        return d


@dataclass(frozen=True)
class PiecewiseUtility:
    """Nondecreasing right-continuous utility; ``-inf`` below ``lower``.

    ``lower_type`` is ``attained`` when ``U(lower) > -inf`` and ``open`` when
    ``U -> -inf`` at ``lower+`` (the first piece must then be ``log`` with
    ``s == lower``).
    """

    lower: float
    lower_type: str
    pieces: tuple[Piece, ...]

    def __post_init__(self):
        ps = self.pieces
        if not ps:
            raise ValueError("utility needs at least one piece")
        if self.lower_type not in ("attained", "open"):
            raise ValueError(f"unknown lower_bound_type {self.lower_type!r}")
        if ps[0].lo != self.lower:
            raise ValueError("first piece must start at the lower bound")
        if ps[-1].hi != INF:
            raise ValueError("last piece must extend to +inf")
        for a, b in zip(ps, ps[1:]):
            if a.hi != b.lo:
                raise ValueError(f"pieces must tile the domain; gap at {a.hi} / {b.lo}")
        if self.lower_type == "open":
            if not (ps[0].form == "log" and ps[0].s == self.lower and math.isfinite(self.lower)):
                raise ValueError("open lower bound needs a first log piece with s equal to the bound")
        elif self.lower == -INF and ps[0].shape == "concave":
            raise ValueError("a utility on the whole line cannot start with a concave power piece")
        for j, (a, b) in enumerate(zip(ps, ps[1:])):
            left = a.value(a.hi)
            right = b.value(b.lo)
            if right < left - _JOIN_TOL * max(1.0, abs(left)):
                raise ValueError(f"utility decreases at breakpoint {a.hi} (piece {j} -> {j + 1})")

    # ------------------------------------------------------------ queries
    @property
    def breakpoints(self) -> list[float]:
        return [p.lo for p in self.pieces[1:]]

    @property
    def asymptotic_slope(self) -> float:
        last = self.pieces[-1]
        return last.slope if last.shape == "linear" else 0.0

    @property
    def left_slope(self) -> float:
        """Limit slope at ``-inf`` (only meaningful when ``lower = -inf``)."""
        first = self.pieces[0]
        return first.slope if first.shape == "linear" else 0.0

    @property
    def bliss(self) -> float:
        """``inf{x : U(x) = U(+inf)}``; ``+inf`` unless the tail is constant."""
        ps = self.pieces
        last = ps[-1]
        if last.shape != "linear" or last.slope != 0.0:
            return INF
        j = len(ps) - 1
        while j > 0 and ps[j - 1].shape == "linear" and ps[j - 1].slope == 0.0 and ps[j - 1].c == last.c:
            j -= 1
        return ps[j].lo

    @property
    def sup(self) -> float:
        return self.pieces[-1].limit_at(INF)

    def piece_index(self, x: float) -> int:
        """Index of the piece whose half-open interval holds ``x``."""
        los = [p.lo for p in self.pieces]
        j = int(np.searchsorted(los, x, side="right")) - 1
        return max(0, min(j, len(self.pieces) - 1))

    def __call__(self, x):
        return eval_utility(self, x)

    def is_concave(self) -> bool:
        from .envelope import concavify

        return all(s.kind == "touch" for s in concavify(self).segments)

    def to_dict(self) -> dict:
        return {
            "lower_bound": self.lower,
            "lower_bound_type": self.lower_type,
            "pieces": [p.to_dict() for p in self.pieces],
        }


def eval_utility(u: PiecewiseUtility, x):
    """Evaluate ``U(x)`` on scalars or arrays, with extended-real inputs."""
    arr = np.asarray(x, dtype=float)
    flat = arr.reshape(-1)
    out = np.empty(flat.shape)
    los = np.array([p.lo for p in u.pieces])
    idx = np.searchsorted(los, flat, side="right") - 1
    for j, piece in enumerate(u.pieces):
        m = idx == j
        if m.any():
            out[m] = piece.value(flat[m])
    below = (flat < u.lower) | np.isneginf(flat)
    if u.lower_type == "open":
        below |= flat == u.lower
    out[below] = -INF
    out[np.isposinf(flat)] = u.sup
    if np.isnan(flat).any():
        raise ValueError("cannot evaluate utility at NaN")
    out = out.reshape(arr.shape)
    if out.ndim == 0:
        return float(out)
    return out


# -------------------------------------------------------------- admissibility


@dataclass(frozen=True)
class AdmissibilityReport:
    lower: float
    lower_finite: bool
    lower_type: str
    inada: bool
    alpha: float
    bliss: float
    concave: bool
    solver_paths: tuple[str, ...]
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "lower": self.lower,
            "lower_finite": self.lower_finite,
            "lower_type": self.lower_type,
            "inada": self.inada,
            "alpha": self.alpha,
            "bliss": self.bliss,
            "concave": self.concave,
            "solver_paths": list(self.solver_paths),
            "notes": list(self.notes),
        }


def check_admissibility(u: PiecewiseUtility) -> AdmissibilityReport:
    """Report which structural conditions hold and which solver paths apply."""
    from .envelope import concavify
    from .errors import NoConcavification

    try:
        env = concavify(u)
    except NoConcavification as exc:
        raise RejectUnbounded(str(exc)) from exc
    alpha = u.asymptotic_slope
    inada = alpha == 0.0
    notes = []
    if u.lower == -INF:
        paths = ("envelope", "conjugate")
        notes.append("lower bound -inf: solver not supported, diagnostics only")
    elif inada:
        paths = ("envelope", "conjugate", "solver:case-1")
    else:
        paths = ("envelope", "conjugate", "solver:alpha-aware")
        notes.append(f"affine tail with slope {alpha}: case classification depends on the kernel")
    return AdmissibilityReport(
        lower=u.lower,
        lower_finite=math.isfinite(u.lower),
        lower_type=u.lower_type,
        inada=inada,
        alpha=alpha,
        bliss=u.bliss,
        concave=all(seg.kind == "touch" for seg in env.segments),
        solver_paths=paths,
        notes=tuple(notes),
    )


# ----------------------------------------------------------------- builders


def piece_from_dict(d: Mapping) -> Piece:
    allowed = {"form", "lo", "hi", "k", "c", "s", "p"}
    extra = set(d) - allowed
    if extra:
        raise ValueError(f"unknown piece keys {sorted(extra)}")
    return Piece(
        form=d["form"],
        lo=float(d["lo"]),
        hi=float(d["hi"]),
        k=float(d.get("k", 0.0)),
        c=float(d.get("c", 0.0)),
        s=float(d.get("s", 0.0)),
        p=float(d.get("p", 1.0)),
    )


def s_shaped(b: float, p: float, k: float) -> PiecewiseUtility:
    """``(x-b)^p`` above ``b`` and ``-k (b-x)^p`` on ``[0, b]``."""
    if b <= 0:
        return PiecewiseUtility(0.0, "attained", (Piece("power-up", 0.0, INF, k=1.0, s=b, p=p),))
    return PiecewiseUtility(
        0.0,
        "attained",
        (
            Piece("power-down", 0.0, b, k=k, s=b, p=p),
            Piece("power-up", b, INF, k=1.0, s=b, p=p),
        ),
    )


def s_shaped_with_floor(b1: float, b2: float, mu: float, p: float, k: float) -> PiecewiseUtility:
    """S-shaped utility around ``b1`` plus a reward ``mu`` for reaching ``b2``."""
    base = s_shaped(b1, p, k)
    if mu == 0.0 or b2 <= 0.0:
        if mu == 0.0:
            return base
        return PiecewiseUtility(0.0, "attained", tuple(_shift(pc, mu) for pc in base.pieces))
    out: list[Piece] = []
    for pc in base.pieces:
        if pc.hi <= b2:
            out.append(pc)
        elif pc.lo >= b2:
            out.append(_shift(pc, mu))
        else:
            out.append(_with_bounds(pc, pc.lo, b2))
            out.append(_shift(_with_bounds(pc, b2, pc.hi), mu))
    return PiecewiseUtility(0.0, "attained", tuple(out))


def _shift(pc: Piece, dc: float) -> Piece:
    return Piece(pc.form, pc.lo, pc.hi, k=pc.k, c=pc.c + dc, s=pc.s, p=pc.p)


def _with_bounds(pc: Piece, lo: float, hi: float) -> Piece:
    return Piece(pc.form, lo, hi, k=pc.k, c=pc.c, s=pc.s, p=pc.p)


def digital(b: float, height: float = 1.0) -> PiecewiseUtility:
    """``height * 1{x >= b}`` on ``[0, inf)``."""
    if b <= 0:
        return PiecewiseUtility(0.0, "attained", (Piece("constant", 0.0, INF, c=height),))
    return PiecewiseUtility(
        0.0,
        "attained",
        (Piece("constant", 0.0, b, c=0.0), Piece("constant", b, INF, c=height)),
    )


def affine(k: float, L: float) -> PiecewiseUtility:
    """``k x`` on ``[L, inf)``."""
    return PiecewiseUtility(float(L), "attained", (Piece("affine", float(L), INF, k=k, c=0.0),))


def two_piece() -> PiecewiseUtility:
    """``2x`` on ``[0, 1]`` and ``x + 1`` above 1."""
    return PiecewiseUtility(
        0.0,
        "attained",
        (Piece("affine", 0.0, 1.0, k=2.0, c=0.0), Piece("affine", 1.0, INF, k=1.0, c=1.0)),
    )


def custom(lower: float, lower_type: str, pieces: Iterable[Mapping | Piece]) -> PiecewiseUtility:
    ps = tuple(pc if isinstance(pc, Piece) else piece_from_dict(pc) for pc in pieces)
    return PiecewiseUtility(float(lower), lower_type, ps)


# ----------------------------------------------------------------- families


@dataclass(frozen=True)
class GrowthWitness:
    """Bounds ``U(x,b) <= u1 + u2 x^delta`` above ``K`` and ``U(lower+theta) = gamma``."""

    u1: float
    u2: float
    K: float
    delta: float
    theta: float
    gamma: float


@dataclass(frozen=True)
class UtilityFamily:
    """``b -> U(., b)`` with optional growth witnesses for moment checks.

    ``template`` receives the benchmark value as a tuple of floats.
    """

    name: str
    template: Callable[[tuple[float, ...]], PiecewiseUtility] = field(compare=False)
    params: tuple[tuple[str, float], ...] = ()
    witness: Callable[[tuple[float, ...]], GrowthWitness] | None = field(default=None, compare=False)
    benchmark_dim: int = 1

    def __hash__(self):
        return hash((self.name, self.params, self.benchmark_dim))

    def __eq__(self, other):
        return isinstance(other, UtilityFamily) and (self.name, self.params, self.benchmark_dim) == (
            other.name,
            other.params,
            other.benchmark_dim,
        )

    def utility(self, b: Sequence[float]) -> PiecewiseUtility:
        return _cached_utility(self, tuple(float(v) for v in b))

    def asymptotic_slope(self, b: Sequence[float]) -> float:
        return self.utility(b).asymptotic_slope

    def bliss(self, b: Sequence[float]) -> float:
        return self.utility(b).bliss

    def lower(self, b: Sequence[float]) -> float:
        return self.utility(b).lower

    @property
    def param_dict(self) -> dict:
        return dict(self.params)


_UTILITY_CACHE: dict = {}


def _cached_utility(fam: UtilityFamily, b: tuple[float, ...]) -> PiecewiseUtility:
    key = (fam, b)
    u = _UTILITY_CACHE.get(key)
    if u is None:
        u = fam.template(b)
        if len(_UTILITY_CACHE) > 4096:
            _UTILITY_CACHE.clear()
        _UTILITY_CACHE[key] = u
    return u


def s_shaped_family(p: float, k: float) -> UtilityFamily:
    if not (0 < p < 1 and k > 0):
        raise ValueError("s-shaped family needs 0 < p < 1 and k > 0")
    return UtilityFamily(
        "s-shaped",
        lambda b: s_shaped(b[0], p, k),
        (("p", p), ("k", k)),
        witness=lambda b: GrowthWitness(u1=0.0, u2=1.0, K=0.0, delta=p, theta=max(b[0], 0.0), gamma=0.0),
    )


def digital_family(height: float = 1.0) -> UtilityFamily:
    return UtilityFamily(
        "digital",
        lambda b: digital(b[0], height),
        (("height", height),),
        witness=lambda b: GrowthWitness(u1=height, u2=0.0, K=0.0, delta=0.5, theta=0.0, gamma=digital(b[0], height)(0.0)),
    )


def affine_family(k: float, L: float) -> UtilityFamily:
    if k < 0:
        raise ValueError("affine family needs k >= 0")
    return UtilityFamily("affine", lambda b: affine(k, L), (("k", k), ("L", L)))


def two_piece_family() -> UtilityFamily:
    return UtilityFamily("two-piece-example-5.1", lambda b: two_piece())


def custom_family(u: PiecewiseUtility) -> UtilityFamily:
    # the family ignores the benchmark; keyed by the full piece list
    key = (("lower", u.lower), ("open", float(u.lower_type == "open"))) + tuple(
        (f"piece{j}", hash(pc)) for j, pc in enumerate(u.pieces)
    )
    return UtilityFamily("custom-piecewise", lambda b: u, key)
