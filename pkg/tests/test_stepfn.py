import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from transcost.stepfn import (StepFunction, cumulative_discounted_integral, discount_weights,
                              discounted_lebesgue_integral, stieltjes_integral)


@st.composite
def step_functions(draw, max_jumps=8):
    k = draw(st.integers(0, max_jumps))
    times = sorted(set(draw(st.lists(st.floats(0.01, 5.0), min_size=k, max_size=k))))
    vals = draw(st.lists(st.floats(-10, 10), min_size=len(times), max_size=len(times)))
    init = draw(st.floats(-10, 10))
    return StepFunction(times, vals, init)


class TestEvaluation:
    def test_right_continuous_and_left_limits(self):
        f = StepFunction([1.0, 3.0], [2.0, 5.0], 1.0)
        assert f(0.5) == 1.0
        assert f(1.0) == 2.0
        assert f.left(1.0) == 1.0
        assert f.left(3.0) == 2.0
        assert f(10.0) == 5.0
        np.testing.assert_array_equal(f.jumps, [1.0, 3.0])

    def test_from_increments_merges_ties(self):
        f = StepFunction.from_increments([2.0, 1.0, 2.0], [1.0, 1.0, 1.0])
        np.testing.assert_array_equal(f.jump_times, [1.0, 2.0])
        np.testing.assert_array_equal(f.jumps, [1.0, 2.0])

    def test_algebra(self):
        f = StepFunction([1.0], [2.0], 1.0)
        g = StepFunction([2.0], [3.0], 0.0)
        h = f * g + f - g
        for t in (0.5, 1.5, 2.5):
            assert h(t) == pytest.approx(f(t) * g(t) + f(t) - g(t))

    def test_immutable(self):
        f = StepFunction([1.0], [2.0])
        with pytest.raises(AttributeError):
            f.values = np.zeros(1)
        with pytest.raises(ValueError):
            f.values[0] = 3.0


class TestStieltjes:
    def test_total_mass(self):
        f = StepFunction.from_increments([1.0, 3.0], [1.0, 2.0])
        assert stieltjes_integral(lambda t: np.ones_like(t), f, 0.0, 5.0) == 3.0

    def test_zero_discount_is_jump_mass(self):
        f = StepFunction.from_increments([0.5, 1.5, 4.0], [2.0, -1.0, 7.0])
        val = stieltjes_integral(lambda t: np.exp(-0.0 * t), f, 0.0, 5.0)
        assert val == pytest.approx(8.0)

    def test_left_endpoint_excluded(self):
        f = StepFunction.from_increments([2.0], [1.0])
        assert stieltjes_integral(lambda t: t, f, 2.0, 3.0) == 0.0


class TestLebesgue:
    def test_constant_undiscounted(self):
        assert discounted_lebesgue_integral(StepFunction.constant(1.0), 0.0, 2.0) == 2.0

    def test_constant_discounted(self):
        val = discounted_lebesgue_integral(StepFunction.constant(1.0), 1.0, 1.0)
        assert val == pytest.approx(1 - math.exp(-1), abs=1e-15)

    def test_indicator(self):
        f = StepFunction([1.0], [0.0], 2.0)
        assert discounted_lebesgue_integral(f, 0.0, 5.0) == 2.0

    def test_discount_weights_zero_rate(self):
        np.testing.assert_allclose(discount_weights(np.array([0.0, 1.0]), np.array([2.0, 1.5]), 0.0),
                                   [2.0, 0.5])

    @settings(max_examples=60, deadline=None)
    @given(step_functions(), st.floats(0.0, 0.5), st.floats(0.1, 6.0))
    def test_matches_quadrature(self, f, r, tau):
        edges = [0.0] + [t for t in f.jump_times if t < tau] + [tau]
        ref = sum(integrate.quad(lambda t: math.exp(-r * t) * float(f(0.5 * (a + b))), a, b,
                                 epsabs=1e-14)[0] for a, b in zip(edges[:-1], edges[1:]))
        assert discounted_lebesgue_integral(f, r, tau) == pytest.approx(ref, abs=1e-10)

    @settings(max_examples=60, deadline=None)
    @given(step_functions(), st.floats(0.0, 0.5), st.floats(0.1, 3.0), st.floats(0.1, 3.0))
    def test_additive_over_windows(self, f, r, a, b):
        whole = discounted_lebesgue_integral(f, r, a + b)
        parts = (discounted_lebesgue_integral(f, r, a)
                 + discounted_lebesgue_integral(f, r, a + b, start=a))
        assert whole == pytest.approx(parts, abs=1e-10)

    @settings(max_examples=40, deadline=None)
    @given(step_functions(), st.floats(0.0, 0.5))
    def test_cumulative_matches_pointwise(self, f, r):
        q = np.array([0.0, 0.3, 1.0, 2.5, 6.0])
        got = cumulative_discounted_integral(f, r, q)
        want = [discounted_lebesgue_integral(f, r, t) if t > 0 else 0.0 for t in q]
        np.testing.assert_allclose(got, want, atol=1e-10)

    @settings(max_examples=40, deadline=None)
    @given(step_functions(), st.floats(0.0, 6.0))
    def test_stieltjes_over_windows(self, f, s):
        g = (lambda t: np.exp(-0.1 * t))
        whole = stieltjes_integral(g, f, 0.0, 6.0)
        assert whole == pytest.approx(stieltjes_integral(g, f, 0.0, s)
                                      + stieltjes_integral(g, f, s, 6.0), abs=1e-12)
