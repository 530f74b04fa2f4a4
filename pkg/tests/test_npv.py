import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import two_state_histories
from transcost.cost_estimators import bang_tsiatis_npv
from transcost.design import DesignRecipe, Term
from transcost.errors import DimensionMismatch, InvariantViolation, MissingCostModel, NoJumps
from transcost.event_history import counting_processes
from transcost.markov import aalen_johansen, nelson_aalen
from transcost.npv import (CovariateProfile, InitialDistribution, PiecewiseRates, QualityWeights,
                           TransitionCostModel, discounted_life_expectancy,
                           empirical_initial_distribution, npv_profile,
                           npv_single_transition_cov, piecewise_sojourn_npv, predict_mean_cost,
                           qaly)
from transcost.regression import CostRegressionData, fit_weighted_gls, ipc_weights
from transcost.scenarios import illness_death
from transcost.simulator import simulate_cohort
from transcost.stepfn import StepFunction
from transcost.survival import censoring_km, kaplan_meier, survival_fit


class _Fit:
    def __init__(self, beta, link="identity"):
        self.beta = np.asarray(beta, dtype=float)
        self.link = link


TIME_RECIPE = DesignRecipe((Term("1"), Term("t")))


def hand_histories():
    return two_state_histories([1.0, 2.0, math.inf], censor=[math.inf, math.inf, 1.5],
                               costs=[100.0, 300.0, 0.0], tau=5.0)


def fitted(histories):
    cim = nelson_aalen(counting_processes(histories))
    return cim, aalen_johansen(cim)


@pytest.fixture(scope="module")
def illness_cohort():
    return simulate_cohort(illness_death(n=300, seed=3))


class TestPredictMeanCost:
    def test_zero(self):
        assert predict_mean_cost(CovariateProfile(), _Fit([0, 0]), TIME_RECIPE, (0, 1), 4.0) == 0

    def test_inner_product(self):
        assert predict_mean_cost(CovariateProfile(), _Fit([2, 3]), TIME_RECIPE, (0, 1), 4.0) == 14

    def test_log_link(self):
        assert predict_mean_cost(CovariateProfile(), _Fit([0, 0], "log"), TIME_RECIPE,
                                 (0, 1), 4.0) == 1.0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            predict_mean_cost(CovariateProfile(), _Fit([1, 2, 3]), TIME_RECIPE, (0, 1), 1.0)

    def test_missing_covariate(self):
        rec = DesignRecipe((Term("1"), Term("x")))
        with pytest.raises(DimensionMismatch):
            predict_mean_cost(CovariateProfile(), _Fit([1, 2]), rec, (0, 1), 1.0)
        assert predict_mean_cost(CovariateProfile({"x": 2.0}), _Fit([1, 2]), rec, (0, 1), 1.0) == 5


class TestNpvProfile:
    def test_zero_costs(self):
        cim, path = fitted(hand_histories())
        rep = npv_profile(cim, path, 0, 0.03, 5.0)
        assert rep.total == 0.0

    def test_constant_cost_is_cumulative_incidence(self):
        hs = hand_histories()
        cim, path = fitted(hs)
        rep = npv_profile(cim, path, 0, 0.0, 5.0, costs={(0, 1): 7.0})
        s = survival_fit(hs).survival(5.0)
        assert rep.transition == pytest.approx(7.0 * (1 - s), abs=1e-12)
        assert rep.transition == pytest.approx(7.0, abs=1e-12)  # Ŝ(5) = 0 here

    def test_rmst(self):
        hs = hand_histories()
        cim, path = fitted(hs)
        rates = PiecewiseRates([0.0, 5.0], [[1.0], [0.0]])
        rep = npv_profile(cim, path, 0, 0.0, 5.0, rates=rates)
        # Ŝ = 1 on [0,1), 2/3 on [1,2), 0 after
        assert rep.sojourn == pytest.approx(1 + 2 / 3, abs=1e-12)

    def test_decomposition_and_mixing(self, illness_cohort):
        hs = illness_cohort.histories
        cim, path = fitted(hs)
        costs = {(0, 1): 100.0, (0, 2): lambda t: 50 + 0 * t, (1, 2): 80.0}
        rates = PiecewiseRates([0, 2, 4], [[5, 6], [20, 25], [0, 0]])
        init = empirical_initial_distribution(hs)
        rep = npv_profile(cim, path, init, 0.03, 4.0, costs, rates)
        assert rep.total == rep.transition + rep.sojourn
        want = sum(p * npv_profile(cim, path, i, 0.03, 4.0, costs, rates).total
                   for i, p in enumerate(init.probs) if p > 0)
        assert rep.total == pytest.approx(want, rel=1e-12)
        assert {r["initial_state"] for r in rep.rows()} == {0, 1, "all"}
        assert rep.to_dict()["unconditional"]["total"] == rep.total

    def test_missing_cost_model(self, illness_cohort):
        cim, path = fitted(illness_cohort.histories)
        with pytest.raises(MissingCostModel):
            npv_profile(cim, path, 0, 0.0, 4.0, costs={(0, 1): 1.0})

    def test_monotone_in_r_and_tau(self, illness_cohort):
        cim, path = fitted(illness_cohort.histories)
        costs = {(0, 1): 100.0, (0, 2): 50.0, (1, 2): 80.0}
        rates = PiecewiseRates([0, 2, 4], [[5, 6], [20, 25], [0, 0]])
        by_r = [npv_profile(cim, path, 0, r, 4.0, costs, rates).total
                for r in (0, 0.01, 0.03, 0.1, 0.5)]
        assert np.all(np.diff(by_r) <= 1e-12)
        by_tau = [npv_profile(cim, path, 0, 0.03, tau, costs, rates).total
                  for tau in (0.5, 1, 2, 3, 4)]
        assert np.all(np.diff(by_tau) >= -1e-12)

    def test_regression_cost_model(self, illness_cohort):
        from transcost.costdata import transition_cost_data
        from transcost.survival import censoring_survival
        hs = illness_cohort.histories
        types = [(0, 1), (0, 2), (1, 2)]
        rec = DesignRecipe(tuple(Term("1", frozenset({tr})) for tr in types))
        data = transition_cost_data(hs, rec)
        fit = fit_weighted_gls(data, ipc_weights(data, censoring_survival(hs), 4.0))
        cim, path = fitted(hs)
        model = TransitionCostModel(fit, rec, frozenset(types))
        consts = {tr: float(b) for tr, b in zip(types, fit.beta)}
        a = npv_profile(cim, path, 0, 0.03, 4.0, model).total
        b = npv_profile(cim, path, 0, 0.03, 4.0, consts).total
        assert a == pytest.approx(b, rel=1e-12)

    def test_bad_initial(self):
        with pytest.raises(InvariantViolation):
            InitialDistribution([0.5, 0.6])


class TestSingleTransition:
    def test_intercept(self):
        fit = survival_fit(hand_histories())
        got = npv_single_transition_cov(fit, [10.0], lambda t: np.ones((t.size, 1)), 0.0, 1.5)
        assert got == pytest.approx(10 * (1 - fit.survival(1.5)))

    def test_zero_beta(self):
        fit = survival_fit(hand_histories())
        assert npv_single_transition_cov(fit, [0.0], lambda t: np.ones((t.size, 1)), 0.0, 5) == 0

    def test_no_jumps(self):
        with pytest.raises(NoJumps):
            npv_single_transition_cov(StepFunction.constant(1.0), [1.0],
                                      lambda t: np.ones((t.size, 1)), 0.0, 5.0)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 30), st.floats(0, 0.2))
    def test_saturated_collapse_to_bt(self, seed, n, r):
        rng = np.random.default_rng(seed)
        t = rng.exponential(1.0, n)
        u = np.where(rng.random(n) < 0.4, rng.exponential(1.5, n), np.inf)
        y = rng.gamma(2.0, 50.0, n)
        tau = 2.0
        obs = (t <= u) & (t <= tau)
        if not obs.any():
            return
        knots = np.unique(t[obs])

        def design(times):
            return (np.asarray(times)[:, None] == knots[None, :]).astype(float)

        rec_t = np.where(obs, t, tau)
        X = design(rec_t)
        data = CostRegressionData(np.where(obs, y, 0), X, rec_t, obs.astype(float), np.arange(n))
        w = ipc_weights(data, censoring_km(t, u), tau)
        fit = fit_weighted_gls(data, w)
        km = kaplan_meier(np.minimum(t, u), t <= u)
        got = npv_single_transition_cov(km, fit.beta * np.exp(-r * knots), design, 0.0, tau)
        assert got == pytest.approx(bang_tsiatis_npv(t, u, y * np.exp(-r * t), 0.0, tau),
                                    abs=1e-10 * max(1.0, y.max()))


class TestLifeExpectancyAndQaly:
    def test_constant_survival(self):
        assert discounted_life_expectancy(StepFunction.constant(1.0), 0.0, 7.0) == 7.0

    def test_fine_exponential(self):
        grid = np.linspace(0, 1, 20001)[1:]
        s = StepFunction(grid, np.exp(-grid), 1.0)
        got = discounted_life_expectancy(s, 1.0, 1.0)
        assert got == pytest.approx((1 - math.exp(-2)) / 2, abs=1e-4)

    def test_piecewise_sojourn_matches_stream(self, illness_cohort):
        hs = [h for h in illness_cohort.histories if h.initial_state == 0]
        cim, path = fitted(hs)
        grid = [0, 1, 2.5, 4]
        b = [3.0, 5.0, 2.0]
        surv = path.entry(0, 0)
        rates = PiecewiseRates(grid, [b, [0, 0, 0], [0, 0, 0]])
        rep = npv_profile(cim, path, 0, 0.05, 4.0, rates=rates)
        assert piecewise_sojourn_npv(surv, grid, b, 0.05) == pytest.approx(rep.sojourn, rel=1e-12)

    def test_qaly_one_is_rmst(self):
        hs = hand_histories()
        cim, path = fitted(hs)
        val = qaly(QualityWeights({0: 1.0}), path, 0, 0.0, 5.0, hs[0].state_space)
        assert val == pytest.approx(discounted_life_expectancy(survival_fit(hs), 0.0, 5.0))
        assert val == pytest.approx(1 + 2 / 3)

    def test_qaly_zero(self, illness_cohort):
        hs = illness_cohort.histories
        _, path = fitted(hs)
        assert qaly(QualityWeights({0: 0.0, 1: 0.0}), path, 0, 0.03, 4.0, hs[0].state_space) == 0

    def test_qaly_illness_death(self, illness_cohort):
        hs = illness_cohort.histories
        _, path = fitted(hs)
        ss = hs[0].state_space
        init = empirical_initial_distribution(hs)
        got = qaly(QualityWeights({0: 1.0, 1: 0.5}), path, init, 0.0, 4.0, ss)
        # independent quadrature over the constancy intervals of P̂(0, t)
        knots = np.concatenate((path.times[path.times < 4.0], [4.0]))
        want = 0.0
        for i, p in enumerate(init.probs):
            for a, b in zip(knots[:-1], knots[1:]):
                P = path.at(a)
                want += p * (b - a) * (P[i, 0] + 0.5 * P[i, 1])
        assert got == pytest.approx(want, rel=1e-12)

    def test_quality_bounds(self):
        ss = hand_histories()[0].state_space
        with pytest.raises(InvariantViolation):
            QualityWeights({0: 1.5}).function(0, ss)
        assert QualityWeights({1: 1.0}).function(1, ss).initial_value == 0.0
