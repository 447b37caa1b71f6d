"""Exact concave envelope of a piecewise utility.

The envelope is built left to right by gift wrapping.  From the current
touch point we look for the steepest line that still supports the graph on
the right.  Either the current concave arc is steeper than every far point
(then we follow the arc until its tangent first hits a far point) or a far
point wins (then we bridge to the farthest point on that supporting line).
All suprema over a single piece are analytic, so the only numerical work is
one-dimensional root finding for tangencies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Callable

import numpy as np

from .errors import NoConcavification
from .utility import Piece, PiecewiseUtility

INF = math.inf
NAN = math.nan

SLOPE_TOL = 1e-12
VALUE_TOL = 1e-11
TANGENCY_TOL = 1e-12


@dataclass(frozen=True)
class Segment:
    """One piece of the envelope.

    ``touch`` segments follow ``source.pieces[piece]`` on ``[lo, hi]``;
    ``bridge`` segments are the line ``slope * x + intercept`` on ``[lo, hi]``.
    """

    kind: str
    lo: float
    hi: float
    piece: int = -1
    slope: float = NAN
    intercept: float = NAN

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "lo": self.lo, "hi": self.hi}
        if self.kind == "touch":
            d["piece"] = self.piece
        else:
            d.update(slope=self.slope, intercept=self.intercept)
        return d


@dataclass(frozen=True)
class ConcaveEnvelope:
    source: PiecewiseUtility
    segments: tuple[Segment, ...]

    @property
    def lower(self) -> float:
        return self.source.lower

    @property
    def bridges(self) -> list[Segment]:
        return [s for s in self.segments if s.kind == "bridge"]

    def slopes(self, seg: Segment) -> tuple[float, float]:
        """Envelope slope at the left and right end of ``seg``."""
        table = self._slope_table
        hit = table.get(id(seg))
        return hit if hit is not None else self._raw_slopes(seg)

    def _raw_slopes(self, seg: Segment) -> tuple[float, float]:
        if seg.kind == "bridge":
            return seg.slope, seg.slope
        pc = self.source.pieces[seg.piece]
        if pc.shape == "linear":
            return pc.slope, pc.slope
        return pc.slope_at(seg.lo), pc.slope_at(seg.hi)

    @cached_property
    def _slope_table(self) -> dict:
        # a touch meeting a tangent bridge has the bridge slope there; snap the float noise of U'
        raw = [list(self._raw_slopes(s)) for s in self.segments]
        for j, s in enumerate(self.segments):
            if s.kind != "touch":
                continue
            for side, k in ((0, j - 1), (1, j + 1)):
                if 0 <= k < len(self.segments) and self.segments[k].kind == "bridge":
                    b = self.segments[k].slope
                    if abs(raw[j][side] - b) <= 1e-9 * max(1.0, abs(b)):
                        raw[j][side] = b
        return {id(s): (r[0], r[1]) for s, r in zip(self.segments, raw)}

    @property
    def tail_slope(self) -> float:
        return self.slopes(self.segments[-1])[1]

    @property
    def head_slope(self) -> float:
        return self.slopes(self.segments[0])[0]

    def touches_tail(self) -> bool:
        return self.segments[-1].kind == "touch"

    def touches_head(self) -> bool:
        return self.segments[0].kind == "touch"

    def segment_index(self, x: float) -> int:
        los = [s.lo for s in self.segments]
        j = int(np.searchsorted(los, x, side="right")) - 1
        return max(0, min(j, len(self.segments) - 1))

    def __call__(self, x):
        arr = np.asarray(x, dtype=float)
        flat = arr.reshape(-1)
        out = np.empty(flat.shape)
        los = np.array([s.lo for s in self.segments])
        idx = np.clip(np.searchsorted(los, flat, side="right") - 1, 0, len(self.segments) - 1)
        for j, seg in enumerate(self.segments):
            m = idx == j
            if not m.any():
                continue
            if seg.kind == "touch":
                out[m] = self.source.pieces[seg.piece].value(flat[m])
            else:
                out[m] = seg.slope * flat[m] + seg.intercept
        below = (flat < self.lower) | np.isneginf(flat)
        if self.source.lower_type == "open":
            below |= flat == self.lower
        out[below] = -INF
        top = np.isposinf(flat)
        if top.any():
            last = self.segments[-1]
            if last.kind == "bridge":
                out[top] = INF if last.slope > 0 else last.intercept
            else:
                out[top] = self.source.pieces[last.piece].limit_at(INF)
        out = out.reshape(arr.shape)
        return float(out) if out.ndim == 0 else out

    def touch_components(self) -> list[tuple[float, float]]:
        """Closed intervals (possibly degenerate) on which the envelope equals U."""
        comps: list[tuple[float, float]] = []

        def add(a, b):
            if comps and a <= comps[-1][1] + 1e-12 * max(1.0, abs(a)):
                comps[-1] = (comps[-1][0], max(comps[-1][1], b))
            else:
                comps.append((a, b))

        for seg in self.segments:
            if seg.kind == "touch":
                add(seg.lo, seg.hi)
            else:
                if math.isfinite(seg.lo) and not (seg.lo == self.lower and self.source.lower_type == "open"):
                    add(seg.lo, seg.lo)
                if math.isfinite(seg.hi):
                    add(seg.hi, seg.hi)
        return comps

    def to_rows(self) -> list[dict]:
        return [s.to_dict() for s in self.segments]


# ---------------------------------------------------------------- root finding


def safeguarded_root(fn: Callable[[float], float], a: float, b: float, dfn: Callable[[float], float] | None = None,
                     fa: float | None = None, fb: float | None = None, xtol: float = 4e-16, ftol: float = 0.0,
                     maxiter: int = 400) -> float:
    """Root of ``fn`` on ``[a, b]`` given a sign change.

    Newton steps when ``dfn`` is given (secant steps otherwise), rejected in
    favour of bisection whenever they leave the bracket or stall.  Endpoint
    values may be infinite; pass ``fa``/``fb`` to avoid evaluating at a
    singular endpoint.
    """
    fa = fn(a) if fa is None else fa
    fb = fn(b) if fb is None else fb
    if fa == 0:
        return a
    if fb == 0:
        return b
    if (fa > 0) == (fb > 0):
        raise ValueError("root not bracketed")
    x, fx = (a, fa) if abs(fa) < abs(fb) else (b, fb)
    width = b - a
    for _ in range(maxiter):
        if b - a <= xtol * max(abs(a), abs(b), 1e-300) or b - a <= 1e-300:
            break
        step = None
        if dfn is not None and math.isfinite(fx):
            d = dfn(x)
            if d != 0 and math.isfinite(d):
                step = x - fx / d
        elif math.isfinite(fa) and math.isfinite(fb) and fb != fa:
            step = b - fb * (b - a) / (fb - fa)
        mid = 0.5 * (a + b)
        if step is None or not (a < step < b) or (b - a) > 0.5 * width:
            cand = mid if step is None or not (a < step < b) else step
        else:
            cand = step
        # force progress every other iteration
        if (b - a) > 0.5 * width and step is not None and a < step < b:
            cand = step
        width = b - a
        fc = fn(cand)
        if fc == 0 or (ftol > 0 and abs(fc) <= ftol):
            return cand
        if (fc > 0) == (fa > 0):
            a, fa = cand, fc
        else:
            b, fb = cand, fc
        # a secant/Newton step landing on the same side twice: bisect next
        if b - a > 0.5 * width:
            m = 0.5 * (a + b)
            fm = fn(m)
            if fm == 0:
                return m
            if (fm > 0) == (fa > 0):
                a, fa = m, fm
            else:
                b, fb = m, fm
        x, fx = (a, fa) if abs(fa) < abs(fb) else (b, fb)
    return x if math.isfinite(fx) else 0.5 * (a + b)


# ---------------------------------------------------------------- construction


class _Builder:
    def __init__(self, u: PiecewiseUtility):
        self.u = u
        self.ps = u.pieces
        self.n = len(u.pieces)
        self.segs: list[Segment] = []

    # emission
    def touch(self, lo: float, hi: float, j: int) -> None:
        if not hi > lo:
            return
        if self.segs:
            last = self.segs[-1]
            if last.kind == "touch" and last.piece == j and abs(last.hi - lo) <= 1e-12 * max(1.0, abs(lo)):
                self.segs[-1] = Segment("touch", last.lo, hi, j)
                return
        self.segs.append(Segment("touch", lo, hi, j))

    def bridge(self, lo: float, hi: float, slope: float, intercept: float) -> None:
        if not hi > lo:
            return
        self.segs.append(Segment("bridge", lo, hi, slope=slope, intercept=intercept))

    # primitives
    def line_argmax(self, sigma: float, x_from: float, j_from: int):
        """Sup of ``U(x) - sigma x`` over ``x >= x_from`` and its argmax components."""
        recs = []
        for j in range(j_from, self.n):
            pc = self.ps[j]
            a = max(pc.lo, x_from)
            if a > pc.hi or (a == pc.hi and j != j_from):
                continue
            v, am = pc.sup_minus_linear(sigma, a, pc.hi)
            if v == INF:
                return INF, []
            recs.append((v, am, j))
        best = max(v for v, _, _ in recs)
        tol = VALUE_TOL * max(1.0, abs(best), abs(sigma) * max((abs(x) for _, am, _ in recs for iv in am for x in iv if math.isfinite(x)), default=0.0))
        comps = sorted((lo, hi, j) for v, am, j in recs if v >= best - tol for lo, hi in am)
        return best, comps

    def max_ratio(self, pc: Piece, xp: float, yp: float) -> float:
        """Steepest slope from ``(xp, yp)`` to the graph of a piece lying to the right."""
        a, b = pc.lo, pc.hi

        def ratio(x):
            return (pc.value(x) - yp) / (x - xp)

        if pc.shape == "linear":
            return max(ratio(a), pc.slope if b == INF else ratio(b))
        if pc.shape == "convex":
            return max(ratio(a), ratio(b))

        def psi(x):
            return pc.deriv(x) * (x - xp) - (pc.value(x) - yp)

        pa = psi(a)
        if pa <= 0:
            return ratio(a)
        if b < INF:
            pb = psi(b)
            if pb >= 0:
                return ratio(b)
        else:
            b = a + max(1.0, abs(a - xp))
            pb = psi(b)
            while pb > 0:
                b = a + 2.0 * (b - a)
                pb = psi(b)

        def dpsi(x):
            return _second_deriv(pc, x) * (x - xp)

        x = safeguarded_root(psi, a, b, dfn=dpsi, fa=pa, fb=pb)
        return ratio(x)

    def bridge_from(self, xp: float, yp: float, idx: int, sigma: float) -> float:
        intercept = yp - sigma * xp
        best, comps = self.line_argmax(sigma, xp, idx)
        if best == INF:
            raise NoConcavification("supporting line unbounded")
        tol_x = 1e-12 * max(1.0, abs(xp))
        ahead = [c for c in comps if c[1] > xp + tol_x]
        if not ahead:
            self.bridge(xp, INF, sigma, intercept)
            return INF
        return self.emit_line(ahead, sigma, intercept, xp)

    def emit_line(self, comps, sigma: float, intercept: float, start: float | None) -> float:
        prev = start
        for a, b, j in comps:
            if prev is not None and a > prev + 1e-12 * max(1.0, abs(prev)):
                self.bridge(prev, a, sigma, intercept)
            lo = a if prev is None else max(a, prev)
            if b > lo:
                self.touch(lo, b, j)
            prev = b if prev is None else max(prev, b)
        return prev

    def follow_arc(self, idx: int, xp: float) -> float:
        pc = self.ps[idx]
        b = pc.hi
        if b == INF or idx == self.n - 1:
            self.touch(xp, b, idx)
            return INF
        later = self.ps[idx + 1:]

        def support(sig: float) -> float:
            return max(q.sup_minus_linear(sig, q.lo, q.hi)[0] for q in later)

        def phi(t: float) -> float:
            sig = pc.deriv(t)
            return support(sig) - (pc.value(t) - sig * t)

        fb = phi(b)
        scale = max(1.0, abs(pc.value(b)), abs(pc.deriv(b) * b))
        if fb <= VALUE_TOL * scale:
            self.touch(xp, b, idx)
            return b
        t = safeguarded_root(phi, xp, b, fa=-1.0, fb=fb, ftol=TANGENCY_TOL * scale)
        self.touch(xp, t, idx)
        sigma = pc.deriv(t)
        return self.bridge_from(t, pc.value(t), idx, sigma)

    def run(self) -> tuple[Segment, ...]:
        u = self.u
        if u.lower == -INF:
            s0 = u.left_slope
            best, comps = self.line_argmax(s0, -INF, 0)
            if best == INF or not comps:
                raise NoConcavification("no concave function dominates the utility")
            if comps[0][0] > -INF:
                self.bridge(-INF, comps[0][0], s0, best)
            xp = self.emit_line(comps, s0, best, None)
        elif u.lower_type == "open":
            xp = self.follow_arc(0, u.lower)
        else:
            xp = u.lower
        guard = 0
        while xp < INF:
            guard += 1
            if guard > 8 * self.n + 16:
                raise RuntimeError("envelope construction did not terminate")
            idx = u.piece_index(xp)
            pc = self.ps[idx]
            yp = pc.value(xp)
            far = -INF
            for j in range(idx + 1, self.n):
                far = max(far, self.max_ratio(self.ps[j], xp, yp))
            if pc.shape == "concave":
                local = pc.deriv(xp)
                if far == -INF or local > far + SLOPE_TOL * max(1.0, abs(far)):
                    xp = self.follow_arc(idx, xp)
                    continue
                sigma = far
            elif pc.shape == "linear":
                sigma = pc.slope if far <= pc.slope + SLOPE_TOL * max(1.0, pc.slope) else far
                if far == -INF:
                    self.touch(xp, INF, idx)
                    break
            else:
                own = (pc.value(pc.hi) - yp) / (pc.hi - xp)
                sigma = max(own, far)
            if sigma == INF:
                raise NoConcavification("vertical supporting line")
            xp = self.bridge_from(xp, yp, idx, sigma)
        return tuple(self.segs)


def _second_deriv(pc: Piece, x: float) -> float:
    if pc.form == "power-up":
        return pc.k * pc.p * (pc.p - 1.0) * (x - pc.s) ** (pc.p - 2.0)
    if pc.form == "log":
        return -pc.k / (x - pc.s) ** 2
    if pc.form == "power-down":
        return pc.k * pc.p * (1.0 - pc.p) * (pc.s - x) ** (pc.p - 2.0)
    return 0.0


@lru_cache(maxsize=8192)
def concavify(u: PiecewiseUtility) -> ConcaveEnvelope:
    """Smallest concave function dominating ``u``, as touch and bridge segments."""
    return ConcaveEnvelope(u, _Builder(u).run())


# ---------------------------------------------------------------- gap functions


class GapFunctions:
    """Nearest relaxed touch points around ``t``.

    With ``n = inf`` the touch set is ``{Ũ = U}``; for finite ``n`` it is
    ``{Ũ <= U + 1/n}``.  ``H(t)`` looks left, ``G(t)`` looks right.
    """

    def __init__(self, env: ConcaveEnvelope, n: float = INF):
        if not n > 0:
            raise ValueError("n must be positive")
        self.env = env
        self.n = n
        self.level = 0.0 if n == INF else 1.0 / n

    # gap D = Ũ - U on one piece under a bridge
    def _gap(self, seg: Segment, pc: Piece):
        def D(x):
            return seg.slope * x + seg.intercept - pc.value(x)

        return D

    def _pieces_under(self, seg: Segment):
        ps = self.env.source.pieces
        for j, pc in enumerate(ps):
            a, b = max(pc.lo, seg.lo), min(pc.hi, seg.hi)
            if b > a:
                yield j, pc, a, b

    def H(self, t: float) -> float:
        env = self.env
        if t < env.lower or (t == env.lower and env.source.lower_type == "open"):
            return t
        seg = env.segments[env.segment_index(t)]
        if seg.kind == "touch" or t == seg.lo or t == seg.hi:
            return t
        if self.level == 0.0:
            return seg.lo
        c = self.level
        for j, pc, a, b in reversed(list(self._pieces_under(seg))):
            if a > t:
                continue
            x = _largest_below(self._gap(seg, pc), pc, seg.slope, a, min(b, t), c)
            if x is not None:
                return x
        return seg.lo

    def G(self, t: float) -> float:
        env = self.env
        if t < env.lower or (t == env.lower and env.source.lower_type == "open"):
            return t
        seg = env.segments[env.segment_index(t)]
        if seg.kind == "touch" or t == seg.lo or t == seg.hi:
            return t
        if self.level == 0.0:
            return seg.hi
        c = self.level
        for j, pc, a, b in self._pieces_under(seg):
            if b < t:
                continue
            # the point b belongs to the next piece; its own gap is checked there
            x = _smallest_below(self._gap(seg, pc), pc, seg.slope, max(a, t), b, c)
            if x is not None:
                return x
        return seg.hi

    def H_hat(self) -> float:
        """``inf{t : H(t) < t}``: the first point where the relaxed touch set breaks."""
        c = self.level
        for seg in self.env.segments:
            if seg.kind != "bridge":
                continue
            for j, pc, a, b in self._pieces_under(seg):
                x = _smallest_above(self._gap(seg, pc), pc, seg.slope, a, b, c)
                if x is not None:
                    return x
        return INF


def _far_left(D, b: float, c: float):
    """Finite stand-in for -inf when scanning a gap that extends to -inf."""
    x = min(b, 0.0) - 1.0
    for _ in range(60):
        if D(x) <= c:
            return x
        x *= 4.0
    return None


def _D_at(D, pc: Piece, slope: float, x: float, ref: float) -> float:
    """``D(x)`` with the limit at ``x = +inf`` taken explicitly."""
    if x != INF:
        return D(x)
    if pc.shape == "linear":
        ds = slope - pc.slope
        if abs(ds) <= 1e-9 * max(1.0, abs(slope)):
            return D(ref)
        return INF if ds > 0 else -INF
    return INF if slope > 0 else D(ref)


def _largest_below(D, pc: Piece, slope: float, a: float, b: float, c: float):
    """Largest x in [a, b] with D(x) <= c, or None."""
    if D(b) <= c:
        return b
    if a == -INF:
        a = _far_left(D, b, c)
        if a is None:
            return None
    if pc.shape == "convex":
        # D concave: sublevel set within [a, b] is [a, r)
        if D(a) > c:
            return None
        return _bisect_pred(lambda x: D(x) <= c, a, b)
    if pc.shape == "linear":
        if D(a) > c:
            return None
        return _bisect_pred(lambda x: D(x) <= c, a, b)
    # concave piece: D convex, sublevel set is an interval
    xm = min(max(pc.inverse_slope(slope), a), b)
    if D(xm) > c:
        return None
    return _bisect_pred(lambda x: D(x) <= c, xm, b)


def _smallest_below(D, pc: Piece, slope: float, a: float, b: float, c: float):
    """Smallest x in [a, b] with D(x) <= c, or None (b taken as a limit point)."""
    if a == -INF:
        a = _far_left(D, b, c)
        if a is None:
            return None
    if D(a) <= c:
        return a
    if pc.shape in ("convex", "linear"):
        if _D_at(D, pc, slope, b, a) > c:
            return None
        if b == INF:
            b = _far_right(D, a, c)
        return _bisect_pred(lambda x: D(x) > c, a, b)
    xm = min(max(pc.inverse_slope(slope), a), b)
    if D(xm) > c:
        return None
    return _bisect_pred(lambda x: D(x) > c, a, xm)


def _smallest_above(D, pc: Piece, slope: float, a: float, b: float, c: float):
    """Infimum of {x in [a, b): D(x) > c}, or None."""
    if a == -INF:
        x = min(b, 0.0) - 1.0
        if D(x) > c:
            return -INF
        a = x
    if D(a) > c:
        return a
    if pc.shape == "concave":
        # D convex with D(a) <= c: exceedance starts after the minimum
        xm = min(max(pc.inverse_slope(slope), a), b)
        if D(b) <= c:
            return None
        return _bisect_pred(lambda x: D(x) <= c, xm, b)
    if pc.shape == "linear":
        if _D_at(D, pc, slope, b, a) <= c:
            return None
        if b == INF:
            b = _far_right(D, a, c, below=False)
        return _bisect_pred(lambda x: D(x) <= c, a, b)
    # D concave: maximum at the stationary point of the convex piece
    xs = np.linspace(a, b, 257)
    vals = np.array([D(x) for x in xs])
    k = int(np.argmax(vals))
    if vals[k] <= c:
        return None
    return _bisect_pred(lambda x: D(x) <= c, a, xs[k])


def _far_right(D, a: float, c: float, below: bool = True) -> float:
    """A finite point right of ``a`` where ``D <= c`` (or ``D > c`` with ``below=False``)."""
    x = max(a, 0.0) + 1.0
    for _ in range(1100):
        if (D(x) <= c) == below:
            return x
        x *= 2.0
    return x


def _bisect_pred(pred, a: float, b: float) -> float:
    """Boundary of a predicate true at ``a`` and false at ``b``."""
    for _ in range(200):
        m = 0.5 * (a + b)
        if m <= a or m >= b:
            break
        if pred(m):
            a = m
        else:
            b = m
    return a


def gap_functions(env: ConcaveEnvelope, n: float = INF) -> GapFunctions:
    return GapFunctions(env, n)


def check_good_concavification(env: ConcaveEnvelope, ns=(1, 2, 4, 10, 100, 1000)) -> bool:
    """True when every probed relaxed gap has finite ends on both sides."""
    probes: list[float] = []
    for seg in env.segments:
        lo, hi = seg.lo, seg.hi
        if math.isfinite(lo) and math.isfinite(hi):
            probes += list(np.linspace(lo, hi, 9))
        elif math.isfinite(lo):
            probes += [lo, lo + 1.0, lo + 10.0, lo + 1e3, lo + 1e6]
        elif math.isfinite(hi):
            probes += [hi, hi - 1.0, hi - 10.0, hi - 1e3, hi - 1e6]
        else:
            probes += [-1e6, -10.0, 0.0, 10.0, 1e6]
    for n in ns:
        gf = GapFunctions(env, n)
        for t in probes:
            if t < env.lower:
                continue
            if not (math.isfinite(gf.H(t)) and math.isfinite(gf.G(t))):
                return False
    return True
