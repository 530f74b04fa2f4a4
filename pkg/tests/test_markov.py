import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from transcost.errors import InvalidFactor
from transcost.event_history import StateSpace, build_event_history, counting_processes
from transcost.markov import (CumulativeIntensityMatrix, aalen_johansen, nelson_aalen,
                              product_integral_parametric)
from transcost.scenarios import illness_death
from transcost.simulator import simulate_cohort
from transcost.stepfn import StepFunction
from transcost.survival import kaplan_meier

from conftest import two_state_histories


class TestNelsonAalen:
    def test_increments(self):
        cim = nelson_aalen(counting_processes(two_state_histories([1.0, 2.0, 3.0])))
        np.testing.assert_allclose(cim.a_hj[(0, 1)].jumps, [1 / 3, 1 / 2, 1.0])

    def test_tied_pair(self):
        cim = nelson_aalen(counting_processes(two_state_histories([1.0, 2.0, 2.0, 5.0, 6.0])))
        assert cim.a_hj[(0, 1)].jumps[1] == pytest.approx(2 / 4)

    def test_censored_only(self):
        cim = nelson_aalen(counting_processes(two_state_histories([math.inf] * 3,
                                                                   censor=[1.0, 2.0, 3.0])))
        assert not cim.a_hj
        path = aalen_johansen(cim, times=[5.0])
        np.testing.assert_array_equal(path.at(5.0), np.eye(2))


class TestAalenJohansen:
    def test_two_state_is_km(self):
        cim = nelson_aalen(counting_processes(two_state_histories([1.0, 2.0, 3.0])))
        path = aalen_johansen(cim)
        km = kaplan_meier([1, 2, 3], [True] * 3)
        for t in (0.5, 1.0, 2.0, 3.0):
            assert 1 - path.at(t)[0, 1] == pytest.approx(km(t), abs=1e-15)

    def test_zero_intensity_identity(self):
        cim = CumulativeIntensityMatrix({(0, 1): StepFunction()}, 3)
        path = aalen_johansen(cim, times=[1.0, 2.0])
        np.testing.assert_array_equal(path.at(2.0), np.eye(3))

    def test_two_factor_product(self):
        a = {(0, 1): StepFunction.from_increments([1.0], [0.5]),
             (1, 2): StepFunction.from_increments([2.0], [1.0])}
        path = aalen_johansen(CumulativeIntensityMatrix(a, 3))
        assert path.at(2.0)[0, 2] == pytest.approx(0.5)
        assert path.before(2.0)[0, 2] == 0.0

    def test_negative_factor(self):
        a = {(0, 1): StepFunction.from_increments([1.0], [1.5])}
        with pytest.raises(InvalidFactor):
            aalen_johansen(CumulativeIntensityMatrix(a, 2))


@pytest.fixture(scope="module")
def cohort_path():
    hs = simulate_cohort(illness_death(n=300, seed=5)).histories
    cim = nelson_aalen(counting_processes(hs))
    return cim, aalen_johansen(cim)


class TestAalenJohansenProperties:
    def test_row_sums(self, cohort_path):
        assert cohort_path[1].row_sum_error() < 1e-12

    def test_absorbing_rows(self, cohort_path):
        np.testing.assert_array_equal(cohort_path[1].matrices[:, 2, :],
                                      np.tile([0.0, 0.0, 1.0], (cohort_path[1].times.size, 1)))

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0.2, 3.8))
    def test_chapman_kolmogorov(self, cohort_path, s):
        cim, path = cohort_path
        later = aalen_johansen(cim, start=s)
        for t in (s, 3.9, 4.0):
            np.testing.assert_allclose(path.at(s) @ later.at(t), path.at(t), atol=1e-13)


class TestParametric:
    def test_exponential(self):
        alpha = {(0, 1): StepFunction.constant(1.0)}
        path = product_integral_parametric(alpha, 2, 1.0)
        assert path.at(1.0)[0, 0] == pytest.approx(math.exp(-1), abs=1e-8)

    def test_zero(self):
        path = product_integral_parametric({(0, 1): StepFunction.constant(0.0)}, 2, 3.0)
        np.testing.assert_allclose(path.at(3.0), np.eye(2))

    def test_matrix_exponential(self):
        rates = {(0, 1): 0.7, (0, 2): 0.2, (1, 2): 0.5, (1, 0): 0.1}
        q = np.zeros((3, 3))
        for (h, j), v in rates.items():
            q[h, j] += v
            q[h, h] -= v
        alpha = {k: StepFunction.constant(v) for k, v in rates.items()}
        path = product_integral_parametric(alpha, 3, 2.5)
        np.testing.assert_allclose(path.at(2.5), expm(2.5 * q), atol=1e-8)

    def test_piecewise_constant(self):
        alpha = {(0, 1): StepFunction([1.0], [2.0], 0.5)}
        path = product_integral_parametric(alpha, 2, 2.0, breakpoints=[1.0])
        assert path.at(2.0)[0, 0] == pytest.approx(math.exp(-0.5 - 2.0), abs=1e-8)
