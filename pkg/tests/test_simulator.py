import math

import numpy as np
import pytest

from transcost.cost_estimators import bang_tsiatis_npv, strawderman_npv, total_cost_triples
from transcost.errors import InvalidSpec
from transcost.regression import ipc_weights
from transcost.costdata import single_transition_data
from transcost.scenarios import illness_death, two_state_covariates
from transcost.simulator import (ScenarioSpec, oracle_lin_bias, oracle_lin_bias_mc, oracle_npv,
                                 oracle_npv_marginal, oracle_survival, simulate_cohort)
from transcost.survival import censoring_km


def two_state(**changes):
    d = dict(labels=["alive", "dead"], absorbing=[1], breaks=[0], intensities={"0->1": [1.0]},
             r=0.0, tau=1.0, n=100, seed=1)
    d.update(changes)
    return ScenarioSpec.from_dict(d)


def constant_illness_death(a, b, c, costs, rates, r, tau):
    return ScenarioSpec.from_dict(dict(
        labels=["healthy", "ill", "dead"], absorbing=[2], breaks=[0],
        intensities={"0->1": [a], "0->2": [b], "1->2": [c]},
        transition_costs={"0->1": {"c0": costs[0]}, "0->2": {"c0": costs[1]},
                          "1->2": {"c0": costs[2]}},
        sojourn_rates={"0": [rates[0]], "1": [rates[1]]}, r=r, tau=tau, n=10))


def closed_form(a, b, c, costs, rates, r, tau):
    def e(k):
        return (1 - math.exp(-(r + k) * tau)) / (r + k)
    k0 = a + b
    int_p00 = e(k0)
    int_p01 = a / (k0 - c) * (e(c) - e(k0))
    return (int_p00 * (a * costs[0] + b * costs[1] + rates[0])
            + int_p01 * (c * costs[2] + rates[1]))


class TestSpec:
    def test_negative_intensity(self):
        with pytest.raises(InvalidSpec):
            two_state(intensities={"0->1": [-1.0]})

    def test_bad_grid(self):
        with pytest.raises(InvalidSpec):
            two_state(grid=[0, 0.5])

    def test_absorbing_start(self):
        with pytest.raises(InvalidSpec):
            two_state(initial=[0.0, 1.0])

    def test_round_trip(self, tmp_path):
        spec = two_state_covariates()
        assert ScenarioSpec.from_dict(spec.to_dict()) == spec
        path = tmp_path / "s.json"
        import json
        path.write_text(json.dumps(spec.to_dict()))
        assert ScenarioSpec.from_json(str(path)) == spec


class TestSimulateCohort:
    def test_zero_intensities(self):
        spec = two_state(intensities={"0->1": [0.0]}, sojourn_rates={"0": [3.0]},
                         grid=[0, 0.5, 1.0])
        c = simulate_cohort(spec)
        assert all(not h.events for h in c.histories)
        np.testing.assert_allclose(c.panels.increments, 1.5)
        np.testing.assert_allclose(c.costs.lump_cost, [])

    def test_determinism(self):
        spec = illness_death(n=200)
        a, b = simulate_cohort(spec, 3), simulate_cohort(spec, 3)
        assert [h.events for h in a.histories] == [h.events for h in b.histories]
        np.testing.assert_array_equal(a.costs.accumulated(4.0, 0.03),
                                      b.costs.accumulated(4.0, 0.03))
        np.testing.assert_array_equal(a.censor_times, b.censor_times)

    def test_replicates_differ(self):
        spec = illness_death(n=50)
        a, b = simulate_cohort(spec, 0), simulate_cohort(spec, 1)
        assert not np.array_equal(a.censor_times, b.censor_times)

    def test_prefix_stable(self):
        spec = illness_death(n=50)
        small, big = simulate_cohort(spec, 0, n=20), simulate_cohort(spec, 0, n=50)
        assert [h.events for h in small.histories] == [h.events for h in big.histories[:20]]

    def test_no_censoring_weights_one(self):
        c = simulate_cohort(two_state_covariates(censoring={"law": "none"}, n=200))
        T, U = c.event_times, c.censor_times
        y = np.ones(c.n)
        d = single_transition_data(T, U, y, c.spec.tau, lambda i, t: [1.0], "lin")
        assert np.all(d.s == 1)
        np.testing.assert_array_equal(ipc_weights(d, censoring_km(T, U), c.spec.tau), 1.0)

    def test_observation_truncated(self):
        c = simulate_cohort(illness_death(n=300))
        for h in c.histories:
            assert all(ev.time <= min(h.censor_time, h.horizon) for ev in h.events)

    def test_exchangeable(self):
        c = simulate_cohort(illness_death(n=300))
        perm = np.random.default_rng(0).permutation(c.n)
        T, U = c.event_times, c.censor_times
        ts, u, y = total_cost_triples(c.histories, c.costs, 0.03)
        a = bang_tsiatis_npv(ts, u, y, 0.0, 4.0)
        b = bang_tsiatis_npv(ts[perm], u[perm], y[perm], 0.0, 4.0)
        assert a == pytest.approx(b, rel=1e-12)
        procs = c.processes
        s1 = strawderman_npv(procs, T, U, 0.03, 4.0)
        s2 = strawderman_npv([procs[k] for k in perm], T[perm], U[perm], 0.03, 4.0)
        assert s1 == pytest.approx(s2, rel=1e-12)


class TestOracle:
    def test_sojourn_closed_form(self):
        spec = two_state(sojourn_rates={"0": [1.0]})
        assert oracle_npv(spec) == pytest.approx(1 - math.exp(-1), abs=1e-9)
        assert oracle_npv(spec) == pytest.approx(0.632121, abs=1e-6)

    def test_transition_closed_form(self):
        spec = two_state(transition_costs={"0->1": {"c0": 100.0}}, tau=50.0)
        assert oracle_npv(spec) == pytest.approx(100 * (1 - math.exp(-50)), rel=1e-9)

    @pytest.mark.parametrize("args", [(0.3, 0.1, 0.5, (100, 50, 80), (5, 20), 0.03, 4.0),
                                      (1.0, 0.5, 2.0, (10, 0, 30), (0, 7), 0.0, 2.5),
                                      (0.2, 0.2, 0.1, (1, 2, 3), (4, 5), 0.1, 10.0)])
    def test_illness_death_closed_form(self, args):
        want = closed_form(*args)
        assert oracle_npv(constant_illness_death(*args)) == pytest.approx(want, abs=1e-6)

    def test_marginal_without_covariates(self):
        spec = illness_death()
        assert oracle_npv_marginal(spec) == pytest.approx(oracle_npv(spec), rel=1e-12)

    def test_survival(self):
        spec = two_state(intensities={"0->1": [0.7]})
        assert oracle_survival(spec, {}, 2.0) == pytest.approx(math.exp(-1.4), rel=1e-9)

    @pytest.mark.slow
    def test_empirical_absorption_matches(self):
        spec = illness_death(censoring={"law": "none"})
        c = simulate_cohort(spec, n=100_000, rng=np.random.default_rng(9))
        T = c.latent_event_times
        for t in (1.0, 2.5, 4.0):
            p = oracle_survival(spec, {}, t)
            se = math.sqrt(p * (1 - p) / c.n)
            assert abs(np.mean(T > t) - p) < 3 * se

    @pytest.mark.slow
    def test_empirical_cost_matches(self):
        spec = illness_death(censoring={"law": "none"})
        c = simulate_cohort(spec, n=100_000, rng=np.random.default_rng(10))
        v = c.costs.accumulated(spec.tau, spec.r)
        se = v.std(ddof=1) / math.sqrt(v.size)
        assert abs(v.mean() - oracle_npv(spec)) < 3 * se


class TestLinBias:
    def test_no_censoring(self):
        assert oracle_lin_bias(illness_death(censoring={"law": "none"})).value == 0.0

    def test_censoring_after_tau(self):
        spec = illness_death(censoring={"law": "uniform", "low": 4.0, "high": 9.0})
        assert oracle_lin_bias(spec).value == pytest.approx(0.0, abs=1e-12)

    def test_atoms_on_grid(self):
        spec = illness_death(censoring={"law": "atoms", "points": [1, 2, 3, math.inf],
                                        "probs": [0.2, 0.2, 0.2, 0.4]})
        assert oracle_lin_bias(spec).value == 0.0
        mc = oracle_lin_bias_mc(spec, n_draws=20_000, seed=1)
        assert mc.value == 0.0

    def test_uniform_hand_integral(self):
        # no deaths, accrual rate b, one interval (0, 2], U ~ U(0.5, 1.5):
        # E* = ∫ b (2 - u) du over (0.5, 1.5) = b
        b = 3.0
        spec = two_state(intensities={"0->1": [0.0]}, sojourn_rates={"0": [b]}, tau=2.0,
                         censoring={"law": "uniform", "low": 0.5, "high": 1.5})
        lb = oracle_lin_bias(spec)
        assert lb.value == pytest.approx(b, rel=1e-9)
        assert lb.expected_total == pytest.approx(2 * b, rel=1e-9)
        assert lb.limit == pytest.approx(b, rel=1e-9)

    def test_quadrature_matches_monte_carlo(self):
        spec = illness_death(n=10)
        q = oracle_lin_bias(spec)
        mc = oracle_lin_bias_mc(spec, n_draws=100_000, seed=3)
        assert abs(q.value - mc.value) < 4 * mc.se
