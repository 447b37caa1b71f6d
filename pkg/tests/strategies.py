"""Random admissible utilities for property tests."""

import math

import numpy as np
from hypothesis import strategies as st

from mvutil.utility import custom

FORMS = ("constant", "affine", "power-up", "power-down", "log")


def random_utility(rng: np.random.Generator, max_pieces: int = 4):
    """Nondecreasing piecewise utility on ``[0, inf)`` with random jumps and shapes."""
    n = int(rng.integers(1, max_pieces + 1))
    cuts = np.cumsum(rng.uniform(0.5, 4.0, n - 1)) if n > 1 else np.array([])
    edges = [0.0, *cuts.tolist(), math.inf]
    pieces = []
    level = float(rng.uniform(-3, 3))
    for j in range(n):
        lo, hi = edges[j], edges[j + 1]
        last = j == n - 1
        forms = ["constant", "affine", "power-up", "log"] if last else list(FORMS)
        if j == 0:
            forms = [f for f in forms if f != "log"]
        form = forms[int(rng.integers(len(forms)))]
        if j > 0 and rng.random() < 0.6:
            level += float(rng.uniform(0.05, 3.0))
        k = float(rng.uniform(0.2, 3.0))
        p = float(rng.uniform(0.2, 0.8))
        if form == "constant":
            pc = dict(form=form, lo=lo, hi=hi, c=level)
        elif form == "affine":
            pc = dict(form=form, lo=lo, hi=hi, k=k, c=level - k * lo)
        elif form == "power-up":
            pc = dict(form=form, lo=lo, hi=hi, k=k, p=p, s=lo, c=level)
        elif form == "log":
            s = lo - float(rng.uniform(0.1, 2.0))
            pc = dict(form=form, lo=lo, hi=hi, k=k, s=s, c=level - k * math.log(lo - s))
        else:
            s = hi + float(rng.uniform(0.0, 2.0))
            pc = dict(form=form, lo=lo, hi=hi, k=k, p=p, s=s, c=level + k * (s - lo) ** p)
        pieces.append(pc)
        if math.isfinite(hi):
            from mvutil.utility import piece_from_dict

            level = float(piece_from_dict(pc).value(hi))
    return custom(0.0, "attained", pieces)


utilities = st.integers(0, 2**32 - 1).map(lambda s: random_utility(np.random.default_rng(s)))


def random_problem(rng: np.random.Generator):
    """Random utility, market and budget; the budget sits strictly inside the feasible range."""
    from mvutil.solver import Problem, feasibility
    from mvutil.statespace import BenchmarkMap, PricingKernel, StateDistribution, StateModel
    from mvutil.utility import custom_family

    u = random_utility(rng)
    kind = int(rng.integers(3))
    if kind == 0:
        model = StateModel(StateDistribution.uniform(1, 2), PricingKernel.identity())
    elif kind == 1:
        model = StateModel(StateDistribution.standard_normal(),
                           PricingKernel.lognormal(float(rng.uniform(0, 0.05)), float(rng.uniform(0.1, 0.4)), float(rng.uniform(1, 10))))
    else:
        n = int(rng.integers(2, 6))
        probs = rng.dirichlet(np.ones(n))
        probs[-1] = 1.0 - probs[:-1].sum()
        vals = np.sort(rng.uniform(0.5, 3.0, n))
        model = StateModel(StateDistribution.discrete(list(zip(vals, probs))), PricingKernel.identity())
    p = Problem(model, custom_family(u), BenchmarkMap.constant(0.0), 0.0)
    f = feasibility(p)
    top = f.upper_cost if math.isfinite(f.upper_cost) else f.lower_cost + 40.0
    x0 = f.lower_cost + float(rng.uniform(0.02, 1.1)) * (top - f.lower_cost)
    return p.with_x0(x0)


problems = st.integers(0, 2**32 - 1).map(lambda s: random_problem(np.random.default_rng(s)))
