import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from mvutil.conjugate import conjugate_at, selection_curves
from mvutil.envelope import check_good_concavification, concavify
from mvutil.errors import NegativeDual
from mvutil.utility import affine, custom, digital, eval_utility, s_shaped, two_piece

from strategies import utilities

INF = math.inf


def root_utility():
    return custom(0.0, "attained", [dict(form="power-up", lo=0, hi=INF, k=2, p=0.5, s=0)])


def zoom_argmax(f, lo, hi, rounds=8, n=20001):
    """Grid argmax refined by repeated zooming on the best cell."""
    for _ in range(rounds):
        xs = np.linspace(lo, hi, n)
        j = int(np.argmax(f(xs)))
        step = xs[1] - xs[0]
        lo, hi = max(xs[0], xs[j] - 2 * step), min(xs[-1], xs[j] + 2 * step)
    return 0.5 * (lo + hi)


def test_two_piece_selections():
    e = concavify(two_piece())
    c = conjugate_at(e, 1.5)
    assert (c.x_min, c.x_max, c.singleton) == (1.0, 1.0, True)
    assert conjugate_at(e, 0.5).x_min == INF
    c = conjugate_at(e, 2.0)
    assert (c.x_min, c.x_max) == (0.0, 1.0)


def test_affine_at_tail_slope():
    c = conjugate_at(concavify(affine(2.0, 1.0)), 2.0)
    assert (c.x_min, c.x_max) == (1.0, INF)


def test_digital_tie():
    c = conjugate_at(concavify(digital(1.0)), 1.0)
    assert (c.x_min, c.x_max, c.V) == (0.0, 1.0, 0.0)
    assert not c.singleton


def test_negative_dual():
    with pytest.raises(NegativeDual):
        conjugate_at(concavify(digital(1.0)), -0.1)


def test_infinite_dual_gives_lower_bound():
    c = conjugate_at(concavify(s_shaped(60, 0.5, 2.25)), INF)
    assert c.x_min == c.x_max == 0.0


@pytest.mark.parametrize("y", [0.05, 0.3, 1.0, 2.5])
def test_root_utility_against_grid(y):
    u = root_utility()
    c = conjugate_at(concavify(u), y)
    assert c.singleton
    assert c.x_min == pytest.approx(1 / y**2, rel=1e-12)
    got = zoom_argmax(lambda x: eval_utility(u, x) - y * x, 0.0, 1e4)
    # float noise in a flat objective limits the grid to relative accuracy
    assert abs(got - c.x_min) < 1e-6 * max(1.0, c.x_min)


def test_selection_curve_regime_one():
    from mvutil.varapp import VarScenario, modified_utility, thresholds

    scn = VarScenario()
    b = (60.0, 40.0)
    u = modified_utility(scn.p, scn.k, 72.0).utility(b)
    curves = selection_curves(concavify(u))
    th = thresholds(scn.p, scn.k, 72.0, b)
    assert th.regime == 1
    for y in np.linspace(0.01, th.y1 * 0.999, 7):
        assert curves.x_min(y) == pytest.approx(60 + (0.5 / y) ** 2, rel=1e-12)


@settings(max_examples=200)
@given(u=utilities, y1=st.floats(0.0, 5.0), dy=st.floats(1e-6, 5.0))
def test_cross_monotone(u, y1, dy):
    e = concavify(u)
    assert conjugate_at(e, y1 + dy).x_max <= conjugate_at(e, y1).x_min


@settings(max_examples=200)
@given(u=utilities)
def test_limits(u):
    e = concavify(u)
    c = selection_curves(e)
    assert c.x_min(1e12) == pytest.approx(u.lower, abs=1e-3)
    small = conjugate_at(e, 1e-9)
    if math.isfinite(u.bliss):
        assert small.x_max == pytest.approx(u.bliss) or small.x_max == INF
    else:
        assert small.x_min > 1e3


@settings(max_examples=200)
@given(u=utilities, y=st.floats(1e-3, 6.0), seed=st.integers(0, 10**6))
def test_maximizers_beat_probes(u, y, seed):
    e = concavify(u)
    c = conjugate_at(e, y)
    probes = np.random.default_rng(seed).uniform(0, 60, 1000)
    for x in (c.x_min, c.x_max, *c.interior_touches):
        if math.isfinite(x):
            best = eval_utility(u, x) - y * x
            assert best == pytest.approx(c.V, abs=1e-9 * max(1.0, abs(c.V)))
            assert np.all(eval_utility(u, probes) - y * probes <= best + 1e-9 * max(1.0, abs(best)))
    # the conjugate of the envelope is the same function
    env_vals = e(probes) - y * probes
    assert np.all(env_vals <= c.V + 1e-9 * max(1.0, abs(c.V)))


@settings(max_examples=200)
@given(u=utilities, seed=st.integers(0, 10**6))
def test_curves_match_pointwise(u, seed):
    e = concavify(u)
    curves = selection_curves(e)
    ys = np.random.default_rng(seed).uniform(1e-3, 6.0, 40)
    ys = np.concatenate([ys, [b for b, _, _ in curves.jump_slopes()]])
    lo = curves.x_min(ys)
    hi = curves.x_max(ys)
    for y, a, b in zip(ys, lo, hi):
        c = conjugate_at(e, y)
        assert a == pytest.approx(c.x_min, rel=1e-10, abs=1e-10)
        assert b == pytest.approx(c.x_max, rel=1e-10, abs=1e-10)


@settings(max_examples=200)
@given(u=utilities)
def test_one_sided_continuity(u):
    e = concavify(u)
    # a bridge that never lands leaves the upper selection discontinuous at the tail slope
    assume(check_good_concavification(e))
    for y, lo, hi in selection_curves(e).jump_slopes():
        right = conjugate_at(e, y * (1 + 1e-9) + 1e-11).x_min
        left = conjugate_at(e, y * (1 - 1e-9) - 1e-11).x_max if y > 1e-10 else hi
        assert right == pytest.approx(lo, rel=1e-4, abs=1e-4)
        assert left == pytest.approx(hi, rel=1e-4, abs=1e-4)
