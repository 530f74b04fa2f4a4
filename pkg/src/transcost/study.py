"""Monte Carlo replication studies against the simulation oracle.

Replicate ``k`` simulates a cohort with the substreams
``SeedSequence(seed, spawn_key=(k, i))`` and applies the selected
estimators.  Results depend only on the scenario and the replicate index,
so any worker count gives identical output.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cost_estimators import bang_tsiatis_npv, lin_interval_npv, strawderman_npv, total_cost_triples
from .costdata import interval_occupancy_data, single_transition_data, transition_cost_data
from .cox import CoxSpec, fit_cox, predict_profile
from .design import DesignRecipe, Term
from .event_history import counting_processes
from .markov import aalen_johansen, nelson_aalen
from .npv import (CovariateProfile, PiecewiseRates, TransitionCostModel,
                  empirical_initial_distribution, npv_profile)
from .regression import fit_weighted_gls, ipc_weights
from .simulator import ScenarioSpec, oracle_lin_bias, oracle_npv, oracle_npv_marginal, simulate_cohort
from .survival import censoring_km, censoring_survival

ESTIMATORS = ("bt", "strawderman", "npv", "lin", "gls", "wls", "cox")
SCALAR = ("bt", "strawderman", "npv", "lin")
Z95 = 1.959963984540054


@dataclass(frozen=True)
class StudyConfig:
    """Settings of a replication study.

    ``profile`` fixes the covariate values for ``npv`` when the scenario has
    covariates (default: the covariate means).  ``convention`` selects the
    record/weight convention of ``wls`` (``"observed"`` or ``"lin"``).
    """

    scenario: ScenarioSpec
    replicates: int
    estimators: tuple = ("bt", "strawderman", "npv", "lin", "gls")
    workers: int = 1
    profile: dict | None = None
    convention: str = "observed"
    omega: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "estimators", tuple(self.estimators))
        bad = set(self.estimators) - set(ESTIMATORS)
        if bad:
            raise ValueError(f"unknown estimators {sorted(bad)}")
        if self.replicates < 1 or self.workers < 1:
            raise ValueError("replicates and workers must be positive")

    def resolved_profile(self):
        if self.profile is not None:
            return {k: float(v) for k, v in self.profile.items()}
        out = {}
        for c in self.scenario.covariates:
            if c["law"] == "bernoulli":
                out[c["name"]] = float(c["p"])
            elif c["law"] == "normal":
                out[c["name"]] = float(c.get("mean", 0.0))
            else:
                p = np.asarray(c["probs"], dtype=float)
                out[c["name"]] = float(np.dot(c["values"], p / p.sum()))
        return out

    def to_dict(self):
        return {"scenario": self.scenario.to_dict(), "replicates": self.replicates,
                "estimators": list(self.estimators), "profile": self.resolved_profile(),
                "convention": self.convention, "omega": self.omega}


# --------------------------------------------------------------------------
# model recipes implied by a scenario


def transition_types(spec):
    return sorted(spec.intensities)


def cost_recipe(spec):
    """Type dummies times (1, t) plus type-specific covariate effects."""
    types = [tr for tr in transition_types(spec) if tr in spec.transition_costs]
    terms = []
    truth = []
    for tr in types:
        law = spec.transition_costs[tr]
        terms += [Term("1", frozenset({tr})), Term("t", frozenset({tr}))]
        truth += [float(law.get("c0", 0.0)), float(law.get("c1", 0.0))]
        for name, d in sorted(law.get("coefs", {}).items()):
            terms.append(Term(name, frozenset({tr})))
            truth.append(float(d))
    return DesignRecipe(tuple(terms)), np.array(truth), types


def intensity_recipe(spec):
    """Type-specific covariate effects for every covariate of each type."""
    terms, truth = [], []
    for tr in transition_types(spec):
        for name, b in sorted(spec.intensity_coefs.get(tr, {}).items()):
            terms.append(Term(name, frozenset({tr})))
            truth.append(float(b))
    return DesignRecipe(tuple(terms)), np.array(truth)


def single_cost_truth(spec):
    """Coefficients of ``(1, t, z...)`` for the only transition into an absorbing state."""
    into = [tr for tr in transition_types(spec) if tr[1] in spec.absorbing]
    if len(into) != 1 or len(spec.labels) - len(spec.absorbing) != 1:
        raise ValueError("wls needs a single transient state with one absorbing transition")
    law = spec.transition_costs.get(into[0], {})
    names = spec.covariate_names
    truth = [float(law.get("c0", 0.0)), float(law.get("c1", 0.0))]
    truth += [float(law.get("coefs", {}).get(c, 0.0)) for c in names]
    return into[0], ["1", "t"] + names, np.array(truth)


# --------------------------------------------------------------------------
# estimators on one cohort


def _vector(fit, truth, names):
    return {"beta": [float(b) for b in fit.beta], "se": [float(s) for s in fit.se],
            "truth": [float(b) for b in truth], "names": list(names)}


def plug_in_npv(cohort, profile=None, omega="identity"):
    """Plug-in NPV: intensities, transition-cost GLS and occupancy rates."""
    spec = cohort.spec
    hs = cohort.histories
    ss = spec.state_space
    r, tau = spec.r, spec.tau
    if spec.covariates:
        irec, _ = intensity_recipe(spec)
        fit = fit_cox(hs, CoxSpec(irec))
        cim, path = predict_profile(fit, profile, tau)
    else:
        cim = nelson_aalen(counting_processes(hs))
        path = aalen_johansen(cim)
    gfit = censoring_survival(hs)
    crec, _, types = cost_recipe(spec)
    costs = None
    if types:
        data = transition_cost_data(hs, crec)
        cfit = fit_weighted_gls(data, ipc_weights(data, gfit, tau), omega)
        costs = TransitionCostModel(cfit, crec, frozenset(types))
    rates = None
    states = [h for h in ss.transient if h in spec.sojourn_rates]
    if states:
        occ = interval_occupancy_data(hs, cohort.costs, spec.grid, states)
        ofit = fit_weighted_gls(occ, ipc_weights(occ, gfit, tau), "identity")
        rates = PiecewiseRates.from_occupancy_fit(ofit, spec.grid, states, ss.n_states)
    init = empirical_initial_distribution(hs)
    prof = CovariateProfile(dict(profile or {}))
    return npv_profile(cim, path, init, r, tau, costs, rates, prof)


def estimate_replicate(config, replicate):
    """All selected estimators on replicate ``replicate``."""
    spec = config.scenario
    cohort = simulate_cohort(spec, replicate)
    T, U = cohort.event_times, cohort.censor_times
    r, tau = spec.r, spec.tau
    out = {}
    for name in config.estimators:
        if name == "bt":
            ts, u, y = total_cost_triples(cohort.histories, cohort.costs, r)
            out[name] = bang_tsiatis_npv(ts, u, y, 0.0, tau)
        elif name == "strawderman":
            out[name] = strawderman_npv(cohort.costs, T, U, r, tau)
        elif name == "npv":
            out[name] = plug_in_npv(cohort, config.resolved_profile(), config.omega).total
        elif name == "lin":
            out[name] = lin_interval_npv(cohort.panels, T, U)
        elif name == "gls":
            rec, truth, _ = cost_recipe(spec)
            data = transition_cost_data(cohort.histories, rec)
            w = ipc_weights(data, censoring_survival(cohort.histories), tau)
            out[name] = _vector(fit_weighted_gls(data, w, config.omega), truth, rec.names)
        elif name == "wls":
            tr, names, truth = single_cost_truth(spec)
            covs = cohort.covariates
            y = np.zeros(cohort.n)
            for k, h in enumerate(cohort.histories):
                if h.events:
                    y[k] = h.events[-1].cost

            def design(i, t):
                return [1.0, t] + [float(covs[c][i]) for c in spec.covariate_names]

            data = single_transition_data(T, U, y, tau, design, config.convention)
            gfit = censoring_km(T, U)
            w = ipc_weights(data, gfit, tau)
            out[name] = _vector(fit_weighted_gls(data, w, "identity"), truth, names)
        elif name == "cox":
            rec, truth = intensity_recipe(spec)
            fit = fit_cox(cohort.histories, CoxSpec(rec))
            out[name] = _vector(fit, truth, rec.names)
    return out


def _run_one(args):
    config, replicate = args
    return estimate_replicate(config, replicate)


def run_replicates(config):
    """Per-replicate results in replicate order."""
    jobs = [(config, k) for k in range(config.replicates)]
    if config.workers == 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * config.workers))))


# --------------------------------------------------------------------------
# targets and summaries


def targets(config):
    """True values of the scalar estimands."""
    spec = config.scenario
    out = {}
    if "bt" in config.estimators or "strawderman" in config.estimators:
        marginal = oracle_npv_marginal(spec)
        out["bt"] = out["strawderman"] = marginal
    if "npv" in config.estimators:
        out["npv"] = (oracle_npv(spec, config.resolved_profile()) if spec.covariates
                      else oracle_npv(spec))
    if "lin" in config.estimators:
        lb = oracle_lin_bias(spec)
        out["lin"] = lb.limit
        out["lin_bias_term"] = lb.value
        out["expected_total"] = lb.expected_total
    return out


def summarize_scalar(values, target):
    v = np.asarray(values, dtype=float)
    R = v.size
    mean = float(v.mean())
    sd = float(v.std(ddof=1)) if R > 1 else 0.0
    se = sd / math.sqrt(R)
    bias = mean - target
    return {"target": float(target), "mean": mean, "sd": sd, "se_mean": se, "bias": bias,
            "bias_over_se": bias / se if se > 0 else math.inf,
            "within_3se": bool(abs(bias) < 3 * se), "replicates": R}


def summarize_vector(results):
    beta = np.array([r["beta"] for r in results])
    se = np.array([r["se"] for r in results])
    truth = np.asarray(results[0]["truth"])
    R = beta.shape[0]
    z = np.abs(beta - truth) / se
    out = []
    for k, name in enumerate(results[0]["names"]):
        sd = float(beta[:, k].std(ddof=1)) if R > 1 else 0.0
        out.append({"name": name, "truth": float(truth[k]), "mean": float(beta[:, k].mean()),
                    "sd": sd, "mean_se": float(se[:, k].mean()),
                    "bias": float(beta[:, k].mean() - truth[k]),
                    "coverage_95": float(np.mean(z[:, k] <= Z95)),
                    "within_3se_rate": float(np.mean(z[:, k] < 3))})
    return {"coefficients": out, "replicates": R,
            "coverage_95_all": float(np.mean(z <= Z95)),
            "within_3se_all_rate": float(np.mean(np.all(z < 3, axis=1)))}


def summarize(config, results, truth=None):
    truth = targets(config) if truth is None else truth
    summary = {}
    for name in config.estimators:
        vals = [r[name] for r in results]
        if name in SCALAR:
            summary[name] = summarize_scalar(vals, truth[name])
            if name == "lin":
                summary[name]["bias_term"] = truth["lin_bias_term"]
                summary[name]["expected_total"] = truth["expected_total"]
        else:
            summary[name] = summarize_vector(vals)
    return summary


def run_study(config):
    """Replicates plus summary.

    Returns
    -------
    dict
        ``{"config", "targets", "summary", "replicates"}``; the
        ``replicates`` list holds per-replicate estimates in order.
    """
    results = run_replicates(config)
    truth = targets(config)
    return {"config": config.to_dict(), "targets": truth,
            "summary": summarize(config, results, truth), "replicates": results}
