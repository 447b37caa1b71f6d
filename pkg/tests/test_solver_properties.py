import math

import numpy as np
from hypothesis import given, settings, strategies as st

from mvutil.solver import GFunction, solve

from strategies import problems


def _states(p):
    d = p.dist
    if d.is_discrete:
        return d.atom_values()
    if d.kind == "uniform":
        return np.linspace(d.lo, d.hi, 201)[:-1]
    return np.linspace(-7, 7, 281)


def pointwise_gap(p, lam, X):
    w = _states(p)
    w = np.repeat(w, 3)
    u = np.tile([0.1, 0.5, 0.9], w.size // 3)
    xs = X(w, u)
    xi = p.xi(w)
    lhs = p.utility_at(w, xs) - lam * xi * xs
    grid = np.unique(np.concatenate([np.linspace(0, 60, 1201), xs[np.isfinite(xs)]]))
    worst = -math.inf
    for x in grid:
        rhs = p.utility_at(w, np.full(w.shape, x)) - lam * xi * x
        scale = np.maximum(1.0, np.abs(lhs))
        worst = max(worst, float(np.max((rhs - lhs) / scale)))
    return worst


@settings(max_examples=200)
@given(p=problems, a=st.floats(1e-3, 20), b=st.floats(1e-3, 20))
def test_g_nonincreasing(p, a, b):
    G = GFunction(p)
    lo, hi = min(a, b), max(a, b)
    assert G(hi) <= G(lo) + 1e-10 * max(1.0, abs(G(hi)))


@settings(max_examples=200)
@given(p=problems)
def test_lagrangian_certificate(p):
    r = solve(p)
    if r.solution is None or r.classification in ("boundary",):
        return
    lam = r.lambda_star
    sols = [r.solution]
    if r.family is not None:
        sols += [r.family.member(n) for n in (2, 3)]
    for X in sols:
        assert pointwise_gap(p, lam, X) <= 1e-9
        if r.classification != "bliss":
            cost = p.cost(X, X.splits()) if not X.needs_uniform else r.budget_used
            assert abs(cost - p.x0) <= p.budget_tol
