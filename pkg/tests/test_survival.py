import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transcost.errors import EmptyStratum
from transcost.event_history import counting_processes
from transcost.markov import aalen_johansen, nelson_aalen
from transcost.survival import censoring_km, censoring_survival, kaplan_meier, survival_fit

from conftest import two_state_histories


class TestKaplanMeier:
    def test_no_censoring(self):
        fit = kaplan_meier([1, 2, 3], [True, True, True])
        np.testing.assert_allclose(fit([1, 2, 3]), [2 / 3, 1 / 3, 0.0])

    def test_with_censoring(self):
        fit = kaplan_meier([1, 2, 3], [True, False, True])
        assert fit(1) == pytest.approx(2 / 3)
        assert fit(2) == pytest.approx(2 / 3)
        assert fit(3) == 0.0

    def test_censored_only(self):
        fit = kaplan_meier([1.0], [False])
        assert fit(100.0) == 1.0 and fit.event_times.size == 0

    def test_events_precede_censoring_at_ties(self):
        fit = kaplan_meier([1.0, 1.0, 2.0], [True, False, True])
        assert fit(1.0) == pytest.approx(2 / 3)
        assert fit.n_at_risk(2.0) == 1


class TestCensoringSurvival:
    def test_no_censoring(self):
        g = censoring_survival(two_state_histories([1.0, 2.0]))[None]
        assert g(5.0) == 1.0

    def test_hand_example(self):
        g = censoring_survival(two_state_histories([1.0, 2.0, math.inf],
                                                   censor=[math.inf, math.inf, 1.5]))[None]
        assert g(1.4) == 1.0
        assert g(1.5) == pytest.approx(0.5)
        assert g.left(2.0) == pytest.approx(0.5)

    def test_strata_identical(self):
        base = [1.0, 2.0, math.inf, 0.7]
        cens = [math.inf, math.inf, 1.5, 3.0]
        hs = two_state_histories(base + base, censor=cens + cens,
                                 covariates={"grp": [0] * 4 + [1] * 4})
        fits = censoring_survival(hs, "grp")
        for t in (0.5, 1.5, 2.5, 4.0):
            assert fits[0](t) == fits[1](t)

    def test_empty_stratum(self):
        hs = two_state_histories([1.0], covariates={"grp": [0]})
        with pytest.raises(EmptyStratum):
            censoring_survival(hs, "grp", levels=[0, 1])


@st.composite
def tie_free(draw):
    n = draw(st.integers(2, 40))
    vals = draw(st.lists(st.floats(0.01, 10.0), min_size=2 * n, max_size=2 * n, unique=True))
    t = np.array(vals[:n])
    u = np.array(vals[n:])
    cens = np.array(draw(st.lists(st.booleans(), min_size=n, max_size=n)))
    return t, np.where(cens, u, np.inf)


class TestProperties:
    @settings(max_examples=100, deadline=None)
    @given(tie_free())
    def test_duality(self, data):
        t, u = data
        x = np.minimum(t, u)
        s = kaplan_meier(x, t <= u)
        g = censoring_km(t, u)
        lhs = s.left(x) * g.left(x)
        np.testing.assert_allclose(lhs, s.n_at_risk(x) / t.size, atol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(tie_free())
    def test_monotone_bounded(self, data):
        t, u = data
        fit = kaplan_meier(np.minimum(t, u), t <= u)
        v = fit.survival.values
        assert np.all(np.diff(v) <= 0) and np.all((v >= 0) & (v <= 1))

    @settings(max_examples=60, deadline=None)
    @given(tie_free())
    def test_km_equals_aalen_johansen(self, data):
        t, u = data
        hs = two_state_histories(list(t), censor=list(u), tau=20.0)
        km = survival_fit(hs)
        path = aalen_johansen(nelson_aalen(counting_processes(hs)))
        grid = np.concatenate((np.minimum(t, u), [0.0, 25.0]))
        np.testing.assert_allclose(1 - path.at(np.minimum(grid, 20.0))[:, 0, 1],
                                   km(np.minimum(grid, 20.0)), atol=1e-12)


class TestInfiniteTimes:
    def test_never_absorbed_never_censored(self):
        # an "event" at +inf (no absorption, no censoring) leaves no finite jump
        fit = kaplan_meier([1.0, 2.0, math.inf], [True, True, True])
        np.testing.assert_array_equal(fit.event_times, [1.0, 2.0])
        assert fit.survival(10.0) == pytest.approx(1 / 3)
        assert fit.n_at_risk(5.0) == 1
