import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mvutil.errors import UndefinedExpectation
from mvutil.statespace import (
    BenchmarkMap,
    ExpectationEngine,
    PricingKernel,
    StateDistribution,
    expect,
    kernel_essential_bounds,
)

QUAD = ExpectationEngine()
MC = ExpectationEngine(mode="monte-carlo", samples=1_000_000, seed=7)
LOGN = PricingKernel.lognormal(0.03, 0.3, 10.0)


def test_uniform_mean():
    assert expect(QUAD, StateDistribution.uniform(1, 2), lambda w: w) == pytest.approx(1.5, abs=1e-14)


def test_lognormal_kernel_mean_is_discount_factor():
    got = expect(QUAD, StateDistribution.standard_normal(), LOGN)
    assert got == pytest.approx(math.exp(-0.3), rel=1e-12)


def test_lognormal_formula():
    w = np.array([-1.0, 0.0, 2.0])
    want = np.exp(-(0.03 + 0.045) * 10 - 0.3 * math.sqrt(10) * w)
    np.testing.assert_allclose(LOGN(w), want, rtol=1e-15)


def test_infinite_on_positive_mass():
    f = lambda w: np.where(w < 1.5, math.inf, 0.0)
    assert expect(QUAD, StateDistribution.uniform(1, 2), f, splits=[1.5]) == math.inf


def test_mixed_infinities_rejected():
    f = lambda w: np.where(w < 1.5, math.inf, -math.inf)
    with pytest.raises(UndefinedExpectation):
        expect(QUAD, StateDistribution.uniform(1, 2), f, splits=[1.5])


def test_discrete_summed_exactly():
    d = StateDistribution.discrete([(0, 0.25), (1, 0.75)])
    assert expect(QUAD, d, lambda w: 4 * w) == 3.0
    assert expect(MC, d, lambda w: 4 * w) == 3.0


def test_split_indicator_exact():
    # an indicator with a declared cut integrates exactly
    d = StateDistribution.standard_normal()
    got = expect(QUAD, d, lambda w: (w < 0.3).astype(float), splits=[0.3])
    assert got == pytest.approx(d.cdf(0.3), abs=1e-13)


def test_essential_bounds():
    assert kernel_essential_bounds(LOGN, StateDistribution.standard_normal()) == (0.0, math.inf, 0.0)
    assert kernel_essential_bounds(PricingKernel.identity(), StateDistribution.uniform(1, 2)) == (1.0, 2.0, 0.0)
    d = StateDistribution.discrete([(0, 0.5), (1, 0.5)])
    ker = PricingKernel.explicit([(-math.inf, math.inf, 1.0, 1.0)])
    assert kernel_essential_bounds(ker, d) == (1.0, 2.0, 0.5)


@pytest.mark.parametrize("bad", [[(0, 0.5), (1, 0.4)], [(0, -0.1), (1, 1.1)], []])
def test_discrete_validation(bad):
    with pytest.raises(ValueError):
        StateDistribution.discrete(bad)


def test_uniform_validation():
    with pytest.raises(ValueError):
        StateDistribution.uniform(2, 1)


def test_benchmark_breakpoints_increasing():
    with pytest.raises(ValueError):
        BenchmarkMap((1.0, 0.0), ((1.0,), (2.0,), (3.0,)))


def test_benchmark_regions():
    b = BenchmarkMap((-1.0,), ((60.0, 40.0), (60.0, 50.0)))
    np.testing.assert_array_equal(b.region_index(np.array([-2.0, -1.0, 0.0])), [0, 1, 1])
    assert b.regions() == [(-math.inf, -1.0, (60.0, 40.0)), (-1.0, math.inf, (60.0, 50.0))]


def test_monte_carlo_reproducible():
    d = StateDistribution.standard_normal()
    a = expect(MC, d, lambda w: np.cos(w))
    b = expect(MC, d, lambda w: np.cos(w))
    assert a == b


@pytest.mark.parametrize("f", [np.cos, lambda w: np.tanh(w) ** 2, lambda w: np.exp(-0.3 * w) / (1 + np.exp(-0.3 * w))])
def test_quadrature_matches_monte_carlo(f):
    d = StateDistribution.standard_normal()
    q = expect(QUAD, d, f)
    m, se = MC.expect_with_error(d, f)
    assert abs(q - m) <= 3 * se


@given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 3))
def test_linearity(a, b, seed):
    d = [StateDistribution.standard_normal(), StateDistribution.uniform(-1, 3)][seed % 2]
    f = np.sin
    g = lambda w: 1 / (1 + w * w)
    lhs = expect(QUAD, d, lambda w: a * f(w) + b * g(w))
    rhs = a * expect(QUAD, d, f) + b * expect(QUAD, d, g)
    assert abs(lhs - rhs) <= 1e-10
