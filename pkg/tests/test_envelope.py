import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvutil.envelope import check_good_concavification, concavify, gap_functions
from mvutil.oracle import chord_sup
from mvutil.utility import custom, digital, eval_utility, s_shaped, two_piece
from mvutil.varapp import d

from strategies import utilities

INF = math.inf


def hole_utility():
    """``x`` on ``x <= 0`` and ``x >= 2``, zero in between."""
    return custom(-INF, "attained", [
        dict(form="affine", lo=-INF, hi=0, k=1, c=0),
        dict(form="constant", lo=0, hi=2, c=0),
        dict(form="affine", lo=2, hi=INF, k=1, c=0),
    ])


def root_then_flat():
    return custom(-INF, "attained", [
        dict(form="power-down", lo=-INF, hi=0, k=1, s=0, p=0.5),
        dict(form="constant", lo=0, hi=INF, c=2),
    ])


def test_concave_input_has_no_bridge():
    e = concavify(two_piece())
    assert all(s.kind == "touch" for s in e.segments)


def test_hole_bridge():
    e = concavify(hole_utility())
    bridges = [s for s in e.segments if s.kind == "bridge"]
    assert len(bridges) == 1
    b = bridges[0]
    assert (b.lo, b.hi, b.slope) == (0.0, 2.0, 1.0)
    np.testing.assert_allclose(e(np.array([-3.0, 0.5, 1.7, 5.0])), [-3.0, 0.5, 1.7, 5.0])


def test_s_shaped_tangent_bridge():
    e = concavify(s_shaped(60, 0.5, 2.25))
    b = e.segments[0]
    assert b.kind == "bridge" and b.lo == 0.0
    # tangency at 60 + 60 / d(2.25)
    assert b.hi == pytest.approx(60 + 60 / d(2.25, 0.5), rel=1e-12)
    assert b.hi == pytest.approx(62.70209837876293, rel=1e-12)
    assert b.slope == pytest.approx(0.30417213483911887, rel=1e-10)


def test_s_shaped_chord_oracle():
    u = s_shaped(60, 0.5, 2.25)
    e = concavify(u)
    xs = np.unique(np.concatenate([np.linspace(0, 400, 4001), 62.7 + np.linspace(-0.05, 0.05, 2001)]))
    xq = np.array([1.0, 10.0, 30.0, 59.0, 61.0, 62.0, 80.0, 200.0])
    np.testing.assert_allclose(e(xq), chord_sup(u, xs, xq), atol=1e-6)


def test_gap_functions_hole():
    g = gap_functions(concavify(hole_utility()), 4)
    assert g.H(1.0) == pytest.approx(0.25)
    assert g.G(1.0) == 2.0


def test_gap_functions_s_shaped():
    e = concavify(s_shaped(60, 0.5, 2.25))
    g = gap_functions(e)
    assert g.H(10.0) == 0.0
    assert g.G(10.0) == e.segments[0].hi


def test_gap_functions_concave_identity():
    e = concavify(two_piece())
    for n in (1, 10, INF):
        g = gap_functions(e, n)
        for t in (0.0, 0.3, 1.0, 7.5):
            assert g.H(t) == t == g.G(t)


def test_good_concavification():
    assert check_good_concavification(concavify(s_shaped(60, 0.5, 2.25)))
    assert check_good_concavification(concavify(digital(1.0)))
    e = concavify(root_then_flat())
    assert not check_good_concavification(e)
    assert gap_functions(e, 4).H(-1.0) == -INF


def _oracle_grid(u, e, xq):
    hi = max(20.0, *(s.lo for s in e.segments if math.isfinite(s.lo)), *(s.hi for s in e.segments if math.isfinite(s.hi)))
    # far points let chords approach a tail that is touched only at infinity
    pts = [np.linspace(0.0, 2 * hi, 1201), np.geomspace(4 * hi, 1e13, 40), xq]
    offs = np.geomspace(1e-8, 1e-2, 25)
    for s in e.segments:
        for x in (s.lo, s.hi):
            if math.isfinite(x):
                pts += [x - offs, x + offs, [x]]
    for x in u.breakpoints:
        if math.isfinite(x):
            pts += [[x], x - offs]
    xs = np.unique(np.concatenate(pts))
    return xs[xs >= 0]


@settings(max_examples=200)
@given(u=utilities, seed=st.integers(0, 10**6))
def test_chord_sup_property(u, seed):
    e = concavify(u)
    rng = np.random.default_rng(seed)
    top = max([20.0] + [s.hi for s in e.segments if math.isfinite(s.hi)])
    xq = rng.uniform(0, top * 1.2, 50)
    got = e(xq)
    want = chord_sup(u, _oracle_grid(u, e, xq), xq)
    np.testing.assert_allclose(got, want, atol=1e-5, rtol=1e-9)


@settings(max_examples=200)
@given(u=utilities, seed=st.integers(0, 10**6))
def test_envelope_dominates_and_is_concave(u, seed):
    e = concavify(u)
    rng = np.random.default_rng(seed)
    xs = np.sort(rng.uniform(0, 30, 300))
    assert np.all(e(xs) >= eval_utility(u, xs) - 1e-9)
    slopes = [e.slopes(s) for s in e.segments]
    flat = [v for pair in slopes for v in pair]
    assert all(b <= a + 1e-12 * max(1.0, abs(a)) for a, b in zip(flat, flat[1:]))
    for s in e.segments:
        if s.kind == "touch":
            hi = min(s.hi, s.lo + 30)
            pts = np.linspace(s.lo, hi, 7)[:-1]
            np.testing.assert_allclose(e(pts), eval_utility(u, pts), atol=1e-9)


@settings(max_examples=200)
@given(u=utilities, t=st.floats(0, 30), n=st.integers(1, 50))
def test_gap_nesting(u, t, n):
    e = concavify(u)
    gn, gm, g = gap_functions(e, n), gap_functions(e, n + 1), gap_functions(e)
    assert g.H(t) <= gm.H(t) <= gn.H(t) <= t <= gn.G(t) <= gm.G(t) <= g.G(t)
