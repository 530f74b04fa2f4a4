import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transcost.errors import (BrokenChain, EventAfterCensoring, MixedStateSpaces,
                              NonMonotoneTimes, TransitionFromAbsorbing)
from transcost.event_history import (StateSpace, build_event_history, counting_processes,
                                     sojourn_table)
from transcost.scenarios import illness_death
from transcost.simulator import simulate_cohort

from conftest import two_state_histories

ID = StateSpace.illness_death()


class TestBuildEventHistory:
    def test_minimal_path(self):
        h = build_event_history([(1.0, 0, 1, 50.0)], ID, 5.0)
        assert len(h.events) == 1
        assert h.events[0].cost == 50.0
        assert h.censor_time == math.inf
        assert h.state_at(0.5) == 0 and h.state_at(1.0) == 1 and h.state_before(1.0) == 0

    def test_mapping_rows(self):
        h = build_event_history([{"time": 1.0, "from_state": 0, "to_state": 2}], ID, 5.0)
        assert h.absorbed and h.absorption_time == 1.0

    def test_non_monotone(self):
        with pytest.raises(NonMonotoneTimes):
            build_event_history([(2.0, 0, 1), (1.0, 1, 2)], ID, 5.0)

    def test_transition_out_of_absorbing(self):
        with pytest.raises((BrokenChain, TransitionFromAbsorbing)):
            build_event_history([(1.0, 0, 2), (2.0, 1, 2)], ID, 5.0)

    def test_broken_chain(self):
        with pytest.raises(BrokenChain):
            build_event_history([(1.0, 0, 1), (2.0, 0, 2)], ID, 5.0)

    def test_event_after_censoring(self):
        with pytest.raises(EventAfterCensoring):
            build_event_history([(2.0, 0, 1)], ID, 5.0, censor_time=1.0)

    def test_event_after_horizon(self):
        with pytest.raises(EventAfterCensoring):
            build_event_history([(6.0, 0, 1)], ID, 5.0)

    def test_errors_are_value_errors(self):
        with pytest.raises(ValueError):
            build_event_history([(2.0, 0, 1), (1.0, 1, 2)], ID, 5.0)

    def test_sojourns(self):
        h = build_event_history([(1.0, 0, 1), (2.5, 1, 2)], ID, 5.0)
        assert h.sojourns() == [(0, 0.0, 1.0, 1), (1, 1.0, 2.5, 2)]
        c = build_event_history([(1.0, 0, 1)], ID, 5.0, censor_time=3.0)
        assert c.sojourns()[-1] == (1, 1.0, 3.0, None)
        assert c.is_censored and c.end_of_observation == 3.0


class TestCountingProcesses:
    def test_three_ordered_events(self):
        cp = counting_processes(two_state_histories([1.0, 2.0, 3.0]))
        n01 = cp.n_hj[(0, 1)]
        np.testing.assert_array_equal(n01.jump_times, [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(n01.jumps, [1.0, 1.0, 1.0])
        np.testing.assert_array_equal(cp.at_risk(0, np.array([1.0, 2.0, 3.0])), [3, 2, 1])

    def test_censored_only(self):
        cp = counting_processes(two_state_histories([math.inf], censor=[1.5]))
        assert not cp.n_hj
        assert cp.at_risk(0, 1.0) == 1 and cp.at_risk(0, 1.5) == 1
        assert cp.at_risk(0, 1.6) == 0

    def test_tied_events(self):
        cp = counting_processes(two_state_histories([2.0, 2.0, 3.0]))
        assert cp.n_hj[(0, 1)](2.0) == 2

    def test_mixed_state_spaces(self):
        a = two_state_histories([1.0])
        b = build_event_history([], ID, 10.0)
        with pytest.raises(MixedStateSpaces):
            counting_processes(a + [b])


@pytest.fixture(scope="module")
def cohort():
    return simulate_cohort(illness_death(n=150, seed=3))


class TestProperties:
    def test_at_risk_matches_brute_force(self, cohort):
        hs = cohort.histories
        cp = counting_processes(hs)
        probe = np.unique(np.concatenate([[ev.time for h in hs for ev in h.events],
                                          [h.censor_time for h in hs if h.censor_time < 4],
                                          np.linspace(0.01, 4.0, 40)]))
        for h in range(3):
            brute = [sum(1 for x in hs if x.state_before(t) == h and x.censor_time >= t)
                     for t in probe]
            np.testing.assert_array_equal(cp.at_risk(h, probe), brute)

    def test_jump_total_equals_event_count(self, cohort):
        cp = counting_processes(cohort.histories)
        total = sum(f.final_value for f in cp.n_hj.values())
        assert total == sum(len(h.events) for h in cohort.histories)

    @settings(max_examples=10, deadline=None)
    @given(st.randoms(use_true_random=False))
    def test_permutation_invariance(self, cohort, rnd):
        hs = list(cohort.histories)
        a = counting_processes(hs)
        rnd.shuffle(hs)
        b = counting_processes(hs)
        for key in a.n_hj:
            np.testing.assert_array_equal(a.n_hj[key].jump_times, b.n_hj[key].jump_times)
            np.testing.assert_array_equal(a.n_hj[key].values, b.n_hj[key].values)
        for h in a.y_h:
            np.testing.assert_array_equal(a.y_h[h].values, b.y_h[h].values)

    def test_sojourn_table_shape(self, cohort):
        tab = sojourn_table(cohort.histories)
        assert tab.subject.size == sum(len(h.sojourns()) for h in cohort.histories)
        assert np.all(tab.stop >= tab.start)
