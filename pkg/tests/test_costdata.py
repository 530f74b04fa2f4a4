import math

import numpy as np
import pytest

from conftest import two_state_histories
from transcost.cost_estimators import CostProcess, CostTable
from transcost.costdata import (interval_occupancy_data, single_transition_data,
                                sojourn_log_rate_data, transition_cost_data)
from transcost.design import DesignRecipe, Term
from transcost.errors import EmptySample
from transcost.event_history import StateSpace, build_event_history
from transcost.regression import fit_weighted_gls
from transcost.scenarios import illness_death
from transcost.simulator import simulate_cohort


def hand_histories():
    return two_state_histories([1.0, 2.0, math.inf], censor=[math.inf, math.inf, 1.5],
                               costs=[100.0, 300.0, 0.0], tau=5.0)


class TestTransitionCostData:
    def test_records(self):
        hs = hand_histories()
        d = transition_cost_data(hs, DesignRecipe((Term("1"), Term("t"))))
        np.testing.assert_array_equal(d.y, [100, 300])
        np.testing.assert_array_equal(d.X, [[1, 1], [1, 2]])
        np.testing.assert_array_equal(d.subject, [0, 1])
        assert d.names == ["1", "t"]

    def test_type_dummies(self):
        ss = StateSpace.illness_death()
        hs = [build_event_history([(1.0, 0, 1, 10.0), (2.0, 1, 2, 20.0)], ss, 5.0),
              build_event_history([(0.5, 0, 2, 30.0)], ss, 5.0)]
        rec = DesignRecipe(tuple(Term("1", frozenset({tr})) for tr in [(0, 1), (0, 2), (1, 2)]))
        d = transition_cost_data(hs, rec)
        np.testing.assert_array_equal(d.X, [[1, 0, 0], [0, 0, 1], [0, 1, 0]])
        np.testing.assert_array_equal(d.subject, [0, 0, 1])
        np.testing.assert_allclose(fit_weighted_gls(d, np.ones(3)).beta, [10, 30, 20])

    def test_no_transitions(self):
        hs = two_state_histories([math.inf], tau=5.0)
        with pytest.raises(EmptySample):
            transition_cost_data(hs, DesignRecipe((Term("1"),)))


class TestSingleTransitionData:
    T = np.array([1.0, 2.0, 6.0, 3.0])
    U = np.array([np.inf, np.inf, np.inf, 1.5])
    y = np.array([100.0, 300.0, 50.0, 80.0])

    def test_observed(self):
        d = single_transition_data(self.T, self.U, self.y, 5.0, lambda i, t: [1.0, t])
        np.testing.assert_array_equal(d.s, [1, 1, 0, 0])
        np.testing.assert_array_equal(d.t, [1, 2, 6, 3])
        np.testing.assert_array_equal(d.y, [100, 300, 0, 0])

    def test_lin(self):
        d = single_transition_data(self.T, self.U, self.y, 5.0, lambda i, t: [1.0, t], "lin")
        np.testing.assert_array_equal(d.s, [1, 1, 1, 0])
        np.testing.assert_array_equal(d.t, [1, 2, 5, 3])

    def test_unknown(self):
        with pytest.raises(ValueError):
            single_transition_data(self.T, self.U, self.y, 5.0, lambda i, t: [1.0], "other")


class TestIntervalOccupancy:
    def test_hand(self):
        ss = StateSpace.illness_death()
        h = build_event_history([(1.5, 0, 1, 0.0), (2.5, 1, 2, 0.0)], ss, 3.0)
        proc = CostProcess.from_pieces(0, [1.5], [999.0], [0.0, 1.5], [1.5, 2.5], [2.0, 10.0])
        d = interval_occupancy_data([h], CostTable.from_processes([proc]), [0, 1, 2, 3])
        # columns: state 0 on 3 intervals, then state 1
        np.testing.assert_allclose(d.X, [[1, 0, 0, 0, 0, 0],
                                         [0, 0.5, 0, 0, 0.5, 0],
                                         [0, 0, 0, 0, 0, 0.5]])
        np.testing.assert_allclose(d.y, [2, 1 + 5, 5])
        np.testing.assert_allclose(d.t, [1, 2, 2.5])
        np.testing.assert_array_equal(d.s, 1)

    def test_censored_records(self):
        ss = StateSpace.two_state()
        h = build_event_history([], ss, 3.0, censor_time=1.5)
        proc = CostProcess.from_pieces(0, starts=[0.0], ends=[1.5], rates=[4.0])
        d = interval_occupancy_data([h], [proc], [0, 1, 2, 3])
        np.testing.assert_array_equal(d.s, [1, 0, 0])
        np.testing.assert_allclose(d.X[0], [1, 0, 0])
        np.testing.assert_allclose(d.X[1:], 0)
        assert d.y[0] == pytest.approx(4.0)

    def test_exact_rate_recovery(self):
        spec = illness_death(n=400, seed=2, sojourn_sigma=0.0, censoring={"law": "none"})
        c = simulate_cohort(spec)
        d = interval_occupancy_data(c.histories, c.costs, spec.grid, [0, 1])
        fit = fit_weighted_gls(d, d.s)
        want = [5, 5, 6, 6, 20, 25, 25, 30]
        np.testing.assert_allclose(fit.beta, want, rtol=1e-8)


class TestLogRate:
    def test_constant_rates(self):
        spec = illness_death(n=200, seed=4, sojourn_sigma=0.0,
                             sojourn_rates={"0": [5, 5, 5, 5], "1": [20, 20, 20, 20]})
        c = simulate_cohort(spec)
        rec = DesignRecipe((Term("1", frozenset({(0, 0)})), Term("1", frozenset({(1, 1)}))))
        d = sojourn_log_rate_data(c.histories, c.processes, rec)
        fit = fit_weighted_gls(d, np.ones(d.y.size))
        np.testing.assert_allclose(fit.beta, np.log([5, 20]), atol=1e-10)

    def test_empty(self):
        hs = two_state_histories([math.inf], tau=5.0)
        with pytest.raises(EmptySample):
            sojourn_log_rate_data(hs, [CostProcess.from_lumps(0, [], [])],
                                  DesignRecipe((Term("1"),)))
