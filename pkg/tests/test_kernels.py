import numpy as np
import pytest

from mvutil import _kernels_py as py
from mvutil import kernels
from mvutil.conjugate import selection_curves
from mvutil.envelope import concavify
from mvutil.utility import eval_utility, s_shaped

from strategies import random_utility

cy = pytest.importorskip("mvutil._kernels", reason="compiled extension not built")


def test_dispatch_reports_backend():
    assert kernels.BACKEND in ("cython", "python")


def test_select_eval_parity():
    rng = np.random.default_rng(0)
    for _ in range(40):
        curves = selection_curves(concavify(random_utility(rng)))
        y = np.concatenate([[0.0, np.inf], curves.breaks, np.exp(rng.uniform(-6, 4, 200))])
        for which in (0, 1):
            args = (curves.breaks, curves.lo_at, curves.hi_at, curves.const, curves.shift, curves.scale, curves.expo,
                    curves.at_zero[which], curves.at_inf, which, 1e-12)
            a = py.select_eval(y, *args)
            b = cy.select_eval(np.ascontiguousarray(y), *args)
            # np.power and C pow may differ in the last bit
            assert np.allclose(a, b, rtol=1e-14, atol=0.0, equal_nan=True)


def test_chord_sup_parity():
    rng = np.random.default_rng(1)
    for _ in range(20):
        u = random_utility(rng)
        xs = np.unique(np.concatenate([[0.0], rng.uniform(0, 20, 60)]))
        us = np.asarray(eval_utility(u, xs), dtype=float)
        xq = rng.uniform(0, 20, 50)
        assert np.allclose(py.chord_sup(xs, us, xq), cy.chord_sup(xs, us, xq), rtol=1e-13, atol=1e-13)


def test_chord_sup_with_missing_values():
    xs = np.array([-1.0, 0.0, 1.0, 2.0])
    us = np.array([-np.inf, 0.0, 0.0, 1.0])
    xq = np.array([-0.5, 0.5, 1.5, 3.0])
    a = py.chord_sup(xs, us, xq)
    b = cy.chord_sup(xs, us, xq)
    assert np.array_equal(a, b)
    assert a[1] == pytest.approx(0.25)
    assert a[3] == -np.inf


def test_lagrangian_argmax_parity():
    rng = np.random.default_rng(2)
    for _ in range(30):
        v = rng.normal(size=(12, 25))
        c = np.sort(rng.uniform(0, 5, (12, 25)), axis=1)
        lam = float(rng.uniform(0, 3))
        assert np.array_equal(py.lagrangian_argmax(v, c, lam), cy.lagrangian_argmax(v, c, lam))


def test_lagrangian_argmax_ties_go_cheap():
    v = np.array([[1.0, 1.0, 2.0]])
    c = np.array([[0.0, 1.0, 2.0]])
    assert py.lagrangian_argmax(v, c, 0.5)[0] == cy.lagrangian_argmax(v, c, 0.5)[0] == 0


def test_enumerate_best_parity():
    rng = np.random.default_rng(3)
    for _ in range(20):
        m, g = int(rng.integers(1, 5)), int(rng.integers(2, 7))
        v = rng.normal(size=(m, g))
        c = rng.uniform(0, 2, (m, g))
        budget = float(rng.uniform(0, 2 * m))
        bp, cp = py.enumerate_best(v, c, budget, 1e-12)
        bc, cc = cy.enumerate_best(v, c, budget, 1e-12)
        if cp is None:
            assert cc is None
            continue
        assert bp == pytest.approx(bc, abs=1e-12)
        assert np.array_equal(cp, cc)


def test_enumerate_best_infeasible():
    v = np.zeros((2, 2))
    c = np.ones((2, 2))
    assert py.enumerate_best(v, c, 1.0, 1e-12)[1] is None
    assert cy.enumerate_best(v, c, 1.0, 1e-12)[1] is None


def test_envelope_evaluation_same_under_both_backends():
    u = s_shaped(60.0, 0.5, 2.25)
    e = concavify(u)
    curves = selection_curves(e)
    y = np.geomspace(1e-3, 10, 500)
    args = (curves.breaks, curves.lo_at, curves.hi_at, curves.const, curves.shift, curves.scale, curves.expo,
            curves.at_zero[0], curves.at_inf, 0, 1e-12)
    assert np.allclose(py.select_eval(y, *args), cy.select_eval(y, *args), rtol=1e-14, atol=0.0)
