"""Conjugate value and extremal maximizers of ``U(x) - y x``.

Maximizers are read off the envelope: ``x`` maximizes ``Ũ - y x`` iff ``y``
lies between the right and left envelope slopes at ``x``, and maximizers of
``U - y x`` are those that also touch (``Ũ = U``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .envelope import ConcaveEnvelope
from .errors import NegativeDual
from . import kernels

INF = math.inf
Y_TOL = 1e-12


@dataclass(frozen=True)
class ConjugateSolution:
    y: float
    V: float
    x_min: float
    x_max: float
    interior_touches: tuple[float, ...] = ()
    interval: bool = False

    @property
    def singleton(self) -> bool:
        return self.x_min == self.x_max

    def to_dict(self) -> dict:
        return {
            "y": self.y,
            "V": self.V,
            "x_min": self.x_min,
            "x_max": self.x_max,
            "singleton": self.singleton,
            "interior_touches": list(self.interior_touches),
        }


def _near(a: float, b: float) -> bool:
    if math.isinf(a) or math.isinf(b):
        return a == b
    return abs(a - b) <= Y_TOL


def _between(y: float, lo: float, hi: float) -> bool:
    """``lo <= y <= hi`` with the slope tolerance."""
    return (y >= lo or _near(y, lo)) and (y <= hi or _near(y, hi))


def maximizer_set(e: ConcaveEnvelope, y: float) -> tuple[list[tuple[float, float]], float]:
    """Maximizers of ``U - y x`` as closed intervals (extended reals) and the value.

    ``+inf``/``-inf`` appear as degenerate intervals when the supremum is
    approached along a tail.
    """
    u = e.source
    segs = e.segments
    out: list[tuple[float, float]] = []
    head_l, _ = e.slopes(segs[0])
    tail = e.tail_slope

    if y < tail and not _near(y, tail):
        return [(INF, INF)], INF
    if u.lower == -INF and y > head_l and not _near(y, head_l):
        return [(-INF, -INF)], INF

    if math.isfinite(u.lower) and u.lower_type == "attained" and _between(y, head_l, INF):
        out.append((u.lower, u.lower))
    if u.lower == -INF and _near(y, head_l):
        out.append((-INF, -INF))

    for j, seg in enumerate(segs):
        sl, sr = e.slopes(seg)
        if seg.kind == "touch":
            pc = u.pieces[seg.piece]
            if pc.shape == "linear":
                if _near(y, pc.slope):
                    out.append((seg.lo, seg.hi))
            elif _between(y, sr, sl) and y > 0:
                if _near(y, sr) and math.isfinite(seg.hi):
                    x = seg.hi
                elif _near(y, sl):
                    x = seg.lo
                else:
                    x = min(max(pc.inverse_slope(y), seg.lo), seg.hi)
                if x == INF:
                    # the maximizer lies beyond the float range
                    out.append((INF, INF))
                elif math.isfinite(x) and not (x == u.lower and u.lower_type == "open"):
                    out.append((x, x))
        elif _near(y, seg.slope):
            for x in (seg.lo, seg.hi):
                if math.isfinite(x):
                    out.append((x, x))
        # kink at the right end of the segment
        if j + 1 < len(segs) and math.isfinite(seg.hi):
            nl, _ = e.slopes(segs[j + 1])
            if _between(y, nl, sr):
                out.append((seg.hi, seg.hi))
    if _near(y, tail):
        # a bridge to +inf runs parallel to, and strictly above, an affine tail, so +inf is no maximizer there
        last = segs[-1]
        if last.kind == "touch" and (u.pieces[last.piece].shape == "linear" or y == 0):
            out.append((INF, INF))

    out = _merge(out)
    V = _value(e, out, y)
    return out, V


def _merge(ivs):
    ivs = sorted(ivs)
    merged: list[tuple[float, float]] = []
    for a, b in ivs:
        if merged and a <= merged[-1][1] + 1e-12 * max(1.0, abs(a) if math.isfinite(a) else 1.0):
            merged[-1] = (merged[-1][0], max(merged[-1][1], b))
        else:
            merged.append((a, b))
    return merged


def _value(e: ConcaveEnvelope, ivs, y: float) -> float:
    u = e.source
    for a, b in ivs:
        for x in (a, b):
            if math.isfinite(x):
                return float(u(x) - y * x)
    # supremum only along a tail
    a = ivs[0][0]
    if a == INF:
        last = e.segments[-1]
        if last.kind == "bridge":
            return last.intercept if _near(y, last.slope) else INF
        pc = u.pieces[last.piece]
        if pc.shape == "linear" and _near(y, pc.slope):
            return pc.c
        return pc.limit_at(INF) if y == 0 else INF
    first = e.segments[0]
    if first.kind == "bridge":
        return first.intercept
    pc = u.pieces[first.piece]
    return pc.c if pc.shape == "linear" else INF


def conjugate_at(e: ConcaveEnvelope, y: float) -> ConjugateSolution:
    """``V(y)`` together with the smallest and largest maximizer."""
    y = float(y)
    if y < 0 or math.isnan(y):
        raise NegativeDual(f"dual variable must be nonnegative, got {y}")
    u = e.source
    if y == INF:
        x = u.lower
        if x > 0:
            V = -INF
        elif x < 0:
            V = INF
        else:
            V = float(u(0.0))
        return ConjugateSolution(y, V, float(x), float(x))
    ivs, V = maximizer_set(e, y)
    x_min = float(ivs[0][0])
    x_max = float(ivs[-1][1])
    inner = tuple(x for a, b in ivs for x in (a, b) if x not in (x_min, x_max) and math.isfinite(x))
    inner = tuple(sorted(set(inner)))
    return ConjugateSolution(y, V, x_min, x_max, inner, interval=any(b > a for a, b in ivs))


# ---------------------------------------------------------------- selection curves


@dataclass(frozen=True)
class SelectionCurves:
    """Piecewise description of ``y -> (X_min(y), X_max(y))`` on ``y >= 0``.

    ``breaks`` is increasing.  At ``y == breaks[i]`` the extremes are
    ``lo_at[i]``/``hi_at[i]``.  On the open interval ``(edges[i], edges[i+1])``
    with ``edges = [0, *breaks, inf]`` the maximizer is unique and equals
    ``const[i]`` when ``expo[i] == 0`` and ``shift[i] + (scale[i]/y)**expo[i]``
    otherwise.
    """

    breaks: np.ndarray
    lo_at: np.ndarray
    hi_at: np.ndarray
    const: np.ndarray
    shift: np.ndarray
    scale: np.ndarray
    expo: np.ndarray
    at_zero: tuple[float, float]
    at_inf: float

    def x_min(self, y):
        return self._eval(y, 0)

    def x_max(self, y):
        return self._eval(y, 1)

    def _eval(self, y, which: int):
        arr = np.asarray(y, dtype=float)
        flat = np.ascontiguousarray(arr.reshape(-1))
        out = kernels.select_eval(flat, self.breaks, self.lo_at, self.hi_at, self.const, self.shift, self.scale,
                                  self.expo, self.at_zero[which], self.at_inf, which, Y_TOL)
        out = out.reshape(arr.shape)
        return float(out) if out.ndim == 0 else out

    def jump_slopes(self) -> list[tuple[float, float, float]]:
        """Slopes with a non-singleton maximizer set, with the two extremes."""
        return [(float(b), float(l), float(h)) for b, l, h in zip(self.breaks, self.lo_at, self.hi_at) if h > l]

    def to_rows(self) -> list[dict]:
        rows = []
        edges = [0.0] + list(self.breaks) + [INF]
        for i in range(len(edges) - 1):
            if self.expo[i] == 0:
                rows.append({"y_lo": edges[i], "y_hi": edges[i + 1], "form": "const", "x": float(self.const[i])})
            else:
                rows.append({"y_lo": edges[i], "y_hi": edges[i + 1], "form": "power", "shift": float(self.shift[i]),
                             "scale": float(self.scale[i]), "expo": float(self.expo[i])})
            if i < len(self.breaks):
                rows.append({"y": float(self.breaks[i]), "x_min": float(self.lo_at[i]), "x_max": float(self.hi_at[i])})
        return rows


def _y_pieces(e: ConcaveEnvelope):
    """Ranges of ``y`` with their maximizer formula, from left to right in ``x``."""
    u = e.source
    segs = e.segments
    out = []  # (y_lo, y_hi, const, shift, scale, expo)
    head_l, _ = e.slopes(segs[0])
    if math.isfinite(u.lower) and u.lower_type == "attained":
        out.append((head_l, INF, u.lower, 0.0, 0.0, 0.0))
    for j, seg in enumerate(segs):
        sl, sr = e.slopes(seg)
        if seg.kind == "touch":
            pc = u.pieces[seg.piece]
            if pc.shape == "concave" and sl > sr:
                if pc.form == "power-up":
                    shift, scale, expo = pc.s, pc.k * pc.p, 1.0 / (1.0 - pc.p)
                else:
                    shift, scale, expo = pc.s, pc.k, 1.0
                out.append((sr, sl, NAN, shift, scale, expo))
        if j + 1 < len(segs) and math.isfinite(seg.hi):
            nl, _ = e.slopes(segs[j + 1])
            if sr > nl:
                out.append((nl, sr, seg.hi, 0.0, 0.0, 0.0))
    tail = e.tail_slope
    if tail > 0:
        out.append((0.0, tail, INF, 0.0, 0.0, 0.0))
    return out


NAN = math.nan


def selection_curves(e: ConcaveEnvelope) -> SelectionCurves:
    pieces = _y_pieces(e)
    pts = {0.0}
    for a, b, *_ in pieces:
        for v in (a, b):
            if math.isfinite(v):
                pts.add(float(v))
    # every slope with a non-singleton maximizer set is a break too
    for seg in e.segments:
        sl, sr = e.slopes(seg)
        if seg.kind == "bridge" or sl == sr:
            if math.isfinite(sl):
                pts.add(float(sl))
    pts = sorted(p for p in pts if p >= 0)
    # collapse slopes closer than the comparison tolerance
    uniq: list[float] = []
    for p in pts:
        if not uniq or p - uniq[-1] > Y_TOL:
            uniq.append(p)
    breaks = [p for p in uniq if p > 0]
    lo_at, hi_at = [], []
    for b in breaks:
        c = conjugate_at(e, b)
        lo_at.append(c.x_min)
        hi_at.append(c.x_max)
    edges = [0.0] + breaks + [INF]
    const, shift, scale, expo = [], [], [], []
    for a, b in zip(edges, edges[1:]):
        mid = 0.5 * (a + b) if math.isfinite(b) else (2.0 * a if a > 0 else 1.0)
        form = None
        for ya, yb, c0, s0, k0, e0 in pieces:
            if ya - Y_TOL <= a and b <= yb + Y_TOL and ya < mid < yb:
                form = (c0, s0, k0, e0)
                break
        if form is None:
            x = conjugate_at(e, mid).x_min
            form = (x, 0.0, 0.0, 0.0)
        c0, s0, k0, e0 = form
        const.append(c0 if e0 == 0 else NAN)
        shift.append(s0)
        scale.append(k0)
        expo.append(e0)
    z = conjugate_at(e, 0.0)
    return SelectionCurves(
        breaks=np.array(breaks, dtype=float),
        lo_at=np.array(lo_at, dtype=float),
        hi_at=np.array(hi_at, dtype=float),
        const=np.array(const, dtype=float),
        shift=np.array(shift, dtype=float),
        scale=np.array(scale, dtype=float),
        expo=np.array(expo, dtype=float),
        at_zero=(z.x_min, z.x_max),
        at_inf=e.source.lower,
    )
