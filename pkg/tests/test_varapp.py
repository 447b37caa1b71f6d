import math

import numpy as np
import pytest

from mvutil import BenchmarkMap, ExpectationEngine, Problem, s_shaped_family, solve
from mvutil.conjugate import conjugate_at
from mvutil.envelope import concavify
from mvutil.errors import ConstraintUnreachable, RegimeViolation
from mvutil.varapp import (
    VarScenario,
    closed_form_selection,
    d,
    dominance_regions,
    level_probability,
    modified_utility,
    thresholds,
    var_solve,
    xi_probability,
)


@pytest.fixture(scope="module")
def plan_ii():
    return var_solve(VarScenario(plan="II"))


@pytest.mark.parametrize("s,expected", [(0.0, 1.0), (1.0, (1 + math.sqrt(2)) ** 2),
                                        (2.25, ((4.5 + math.sqrt(24.25)) / 2) ** 2)])
def test_d_roots(s, expected):
    x = d(s, 0.5)
    assert x == pytest.approx(expected, rel=1e-12)
    assert abs(0.5 * (x + 1) - 1 - s * x**0.5) < 1e-12


def test_d_residual_other_exponents():
    for p in (0.1, 0.3, 0.7, 0.95):
        for s in (0.0, 0.01, 1.0, 40.0):
            x = d(s, p)
            assert x > 0
            assert abs(p * (x + 1) - 1 - s * x**p) < 1e-12 * max(1.0, p * x)


def test_d_rejects_bad_input():
    with pytest.raises(ValueError):
        d(-1.0, 0.5)
    with pytest.raises(ValueError):
        d(1.0, 1.0)


def test_modified_utility_values():
    base = s_shaped_family(0.5, 2.25).utility((60.0,))
    same = modified_utility(0.5, 2.25, 0.0).utility((60.0, 40.0))
    for x in (0.0, 10.0, 39.9, 40.0, 60.0, 100.0):
        assert same(x) == base(x)
    u = modified_utility(0.5, 2.25, 1.0).utility((60.0, 40.0))
    assert u(40.0) == pytest.approx(-2.25 * 20**0.5 + 1, abs=1e-12)
    assert u(39.999) == pytest.approx(-2.25 * 20.001**0.5, abs=1e-12)
    assert u(-1.0) == -math.inf


def test_thresholds_regimes():
    th = thresholds(0.5, 2.25, 1.0, (60.0, 40.0))
    assert th.regime == (1 if th.y1 <= th.y2_mu else 2)
    assert th.d_k == pytest.approx(d(2.25, 0.5))
    with pytest.raises(RegimeViolation):
        thresholds(0.5, 2.25, 1.0, (40.0, 60.0))
    with pytest.raises(RegimeViolation):
        thresholds(0.5, 2.25, 1.0, (40.0, 0.0))


def test_closed_form_branches():
    scn = VarScenario()
    b = (60.0, 40.0)
    mu = 72.0
    th = thresholds(scn.p, scn.k, mu, b)
    assert th.regime == 1
    y = 0.5 * th.y1
    assert closed_form_selection(scn, mu, b, y) == pytest.approx(60 + (0.5 / y) ** 2)
    assert closed_form_selection(scn, mu, b, 0.5 * (th.y1 + th.y2_mu)) == 40.0
    assert closed_form_selection(scn, mu, b, 1.01 * max(th.y2_mu, th.y3_mu)) == 0.0
    with pytest.raises(RegimeViolation):
        closed_form_selection(scn, mu, (40.0, 60.0), 1.0)


def test_closed_form_regime_two():
    scn = VarScenario()
    b = (60.0, 40.0)
    th = thresholds(scn.p, scn.k, 0.0, b)
    assert th.regime == 2
    assert closed_form_selection(scn, 0.0, b, 0.99 * th.y3_mu) > 60.0
    assert closed_form_selection(scn, 0.0, b, 1.01 * th.y3_mu) == 0.0


def test_closed_form_matches_generic_pipeline():
    rng = np.random.default_rng(11)
    scn = VarScenario()
    worst = 0.0
    for _ in range(1000):
        b2 = rng.uniform(1.0, 80.0)
        b1 = b2 + rng.uniform(0.5, 60.0)
        mu = float(rng.choice([0.0, rng.uniform(0.0, 5.0), rng.uniform(0.0, 200.0)]))
        th = thresholds(scn.p, scn.k, mu, (b1, b2))
        # stay off the switching slope itself, where both selections are optimal
        while True:
            y = float(np.exp(rng.uniform(-5.0, 2.0)))
            if min(abs(y - t) for t in (th.y1, th.y2_mu, th.y3_mu)) > 1e-7 * y:
                break
        want = closed_form_selection(scn, mu, (b1, b2), y)
        env = concavify(modified_utility(scn.p, scn.k, mu).utility((b1, b2)))
        got = conjugate_at(env, y).x_min
        worst = max(worst, abs(got - want) / max(1.0, abs(want)))
    assert worst < 1e-8


def test_var_solve_plan_ii(plan_ii):
    res = plan_ii
    assert res.mu_star > 0
    assert abs(res.prob_floor - 0.95) < 1e-4
    assert abs(res.report.budget_used - 30.0) < 1e-6 * 30.0
    assert level_probability(res.scenario, res.mu_star, res.lambda_star, 50.0) == pytest.approx(0.84, abs=5e-3)


def test_plan_ii_beats_plan_i_on_a_band(plan_ii):
    plan_i = var_solve(VarScenario(plan="I"))
    regs = [r for r in dominance_regions(plan_ii, plan_i) if r.prob > 1e-3]
    assert len(regs) == 1
    band = regs[0]
    assert band.xi_lo == pytest.approx(0.85, abs=0.01)
    assert band.xi_hi == pytest.approx(1.22, abs=0.01)
    assert band.prob == pytest.approx(0.108, abs=5e-3)
    assert xi_probability(plan_ii.scenario, band.xi_lo, band.xi_hi) == pytest.approx(band.prob, abs=1e-3)


def test_var_solve_vacuous_constraint():
    scn = VarScenario(alpha=0.999)
    res = var_solve(scn)
    assert res.mu_star == 0.0
    plain = Problem(scn.model(), s_shaped_family(scn.p, scn.k), BenchmarkMap.constant(scn.L1), scn.x0)
    ref = solve(plain)
    assert res.lambda_star == pytest.approx(ref.lambda_star, rel=1e-9)
    ws = np.linspace(-4, 4, 81)
    assert np.allclose(res.x_star(ws), ref.solution(ws), rtol=1e-9)


def test_var_solve_unreachable():
    with pytest.raises(ConstraintUnreachable):
        var_solve(VarScenario(x0=0.5, alpha=0.01))


def test_var_solve_finer_quadrature_agrees(plan_ii):
    res = var_solve(VarScenario(plan="II"), ExpectationEngine(mode="quadrature", nodes=512))
    assert res.mu_star == pytest.approx(plan_ii.mu_star, rel=1e-6)


def test_scenario_validation():
    with pytest.raises(ValueError):
        VarScenario(p=1.5)
    with pytest.raises(ValueError):
        VarScenario(plan="IV")
    with pytest.raises(ValueError):
        VarScenario(L1=30.0)
