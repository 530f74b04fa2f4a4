"""Built-in example scenarios."""

from __future__ import annotations

from .simulator import ScenarioSpec


def illness_death(**changes):
    """Illness-death model with piecewise-constant intensities, lognormal
    transition costs, state-specific accrual and uniform censoring."""
    d = dict(
        labels=["healthy", "ill", "dead"], absorbing=[2], breaks=[0, 1, 2, 3],
        intensities={"0->1": [0.3, 0.4, 0.5, 0.5], "0->2": [0.05, 0.1, 0.1, 0.15],
                     "1->2": [0.2, 0.3, 0.4, 0.4]},
        transition_costs={"0->1": {"c0": 100, "c1": 10}, "0->2": {"c0": 50},
                          "1->2": {"c0": 80, "c1": 5}},
        cost_sigma=0.5,
        sojourn_rates={"0": [5, 5, 6, 6], "1": [20, 25, 25, 30]}, sojourn_sigma=0.3,
        censoring={"law": "uniform", "low": 0.5, "high": 5.0},
        initial=[0.8, 0.2, 0.0], r=0.03, tau=4.0, grid=[0, 1, 2, 3, 4], n=2000, seed=7)
    d.update(changes)
    return ScenarioSpec.from_dict(d)


def two_state_covariates(**changes):
    """Alive/dead with two covariates acting on the hazard and the terminal cost."""
    d = dict(
        labels=["alive", "dead"], absorbing=[1], breaks=[0, 1, 2],
        intensities={"0->1": [0.3, 0.4, 0.5]},
        intensity_coefs={"0->1": {"x1": 0.5, "x2": -0.4}},
        transition_costs={"0->1": {"c0": 200, "c1": 30, "coefs": {"x1": 60, "x2": -20}}},
        cost_sigma=0.6,
        sojourn_rates={"0": [10, 10, 12]},
        covariates=[{"name": "x1", "law": "bernoulli", "p": 0.4},
                    {"name": "x2", "law": "normal", "mean": 0.0, "sd": 1.0}],
        censoring={"law": "uniform", "low": 0.0, "high": 6.0},
        initial=[1.0, 0.0], r=0.03, tau=3.0, grid=[0, 1, 2, 3], n=1000, seed=11)
    d.update(changes)
    return ScenarioSpec.from_dict(d)


SCENARIOS = {"illness-death": illness_death, "two-state": two_state_covariates}


def get_scenario(name_or_path):
    """A built-in scenario by name, or a scenario JSON file."""
    if name_or_path in SCENARIOS:
        return SCENARIOS[name_or_path]()
    return ScenarioSpec.from_json(name_or_path)
