"""Command-line interface.

::

    transcost simulate --scenario illness-death --out cohort/
    transcost estimate bt --data cohort/ --tau 4 --r 0.03
    transcost study --scenario illness-death --replicates 500 --workers 4
    transcost check

Reports are written to ``--out`` (default ``$TRANSCOST_OUT`` or
``./transcost-out``).  Every report embeds the resolved configuration;
run metadata such as timestamps goes to a ``.meta.json`` sidecar so that
reports are byte-identical across runs.  Failures print a JSON object with
the violated invariant to stderr and exit with status 1.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .cost_estimators import (bang_tsiatis_npv, build_panel_set, lin_interval_npv,
                              strawderman_npv, total_cost_triples)
from .costdata import interval_occupancy_data, single_transition_data, transition_cost_data
from .cox import CoxSpec, fit_cox, predict_profile
from .design import DesignRecipe, Term
from .errors import TranscostError
from .event_history import counting_processes
from .identities import run_identity_suite
from .io import ingest, read_cost_records, write_cohort, write_json, write_table
from .markov import aalen_johansen, nelson_aalen
from .npv import (CovariateProfile, InitialDistribution, PiecewiseRates, QualityWeights,
                  TransitionCostModel, discounted_life_expectancy, empirical_initial_distribution,
                  npv_profile, qaly)
from .regression import fit_weighted_gee, fit_weighted_gls, ipc_weights
from .scenarios import get_scenario
from .simulator import simulate_cohort
from .study import ESTIMATORS, StudyConfig, run_study
from .survival import censoring_survival, survival_fit

ENV_OUT = "TRANSCOST_OUT"
ESTIMATE_CHOICES = ("km", "aj", "cox", "bt", "strawderman", "lin", "gls", "gee", "npv", "qaly")


class UsageError(TranscostError):
    invariant = "UsageError"


# --------------------------------------------------------------------------
# helpers


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _load_json(path):
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _out_dir(args):
    d = args.out or os.environ.get(ENV_OUT) or "transcost-out"
    os.makedirs(d, exist_ok=True)
    return d


def _emit(args, name, report, started):
    out = _out_dir(args)
    path = os.path.join(out, f"{name}.json")
    write_json(path, report)
    meta = {"created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "elapsed_seconds": round(time.time() - started, 3), "version": __version__,
            "argv": sys.argv[1:], "output_dir": os.path.abspath(out)}
    if getattr(args, "workers", None) is not None:
        meta["workers"] = args.workers
    write_json(path[:-5] + ".meta.json", meta)
    print(path)
    return path


def _grid(args, tau):
    if args.grid:
        g = _floats(args.grid)
        if g[0] != 0 or abs(g[-1] - tau) > 1e-12:
            raise UsageError("--grid must start at 0 and end at tau")
        return g
    return None


def _type_recipe(types, covariates, time_bases=("1", "t")):
    terms = [Term(b, frozenset({tr})) for tr in types for b in time_bases]
    terms += [Term(c, frozenset({tr})) for tr in types for c in covariates]
    return DesignRecipe(tuple(terms))


def _observed_types(histories):
    return sorted({(ev.from_state, ev.to_state) for h in histories for ev in h.events})


def _recipe(items, fallback):
    return DesignRecipe.from_list(items) if items else fallback


def _weights(bundle, data, args):
    fits = censoring_survival(bundle.histories, args.strata)
    return ipc_weights(data, fits, bundle.horizon)


def _regression_data(bundle, args, profile):
    hs = bundle.histories
    covs = bundle.report["covariates"]
    if args.target == "transitions":
        recipe = _recipe(profile.get("cost_terms"), _type_recipe(_observed_types(hs), covs))
        return transition_cost_data(hs, recipe, args.strata)
    if args.target == "records":
        path = os.path.join(args.data, "cost-records.csv")
        if not os.path.exists(path):
            raise UsageError("--target records needs cost-records.csv in the data directory")
        labels = {h.subject_id: h.covariate(args.strata) for h in hs} if args.strata else None
        return read_cost_records(path, [h.subject_id for h in hs], labels)
    if args.target == "occupancy":
        grid = _grid(args, bundle.horizon)
        if grid is None:
            raise UsageError("--target occupancy needs --grid")
        return interval_occupancy_data(hs, bundle.costs, grid, strata=args.strata)
    # single terminal event: cost at absorption regressed on (1, t, covariates)
    y = np.array([h.events[-1].cost if h.absorbed else 0.0 for h in hs])
    zs = [[float(h.covariates[c]) for c in covs] for h in hs]
    data = single_transition_data(bundle.event_times, bundle.censor_times, y, bundle.horizon,
                                  lambda i, t: [1.0, t] + zs[i], args.convention)
    labels = tuple(h.covariate(args.strata) for h in hs) if args.strata else None
    data = type(data)(data.y, data.X, data.t, data.s, data.subject, labels, ["1", "t"] + covs)
    return data


def _intensity_model(bundle, profile_doc, z):
    """AJ path without covariates; Cox profile prediction otherwise."""
    hs = bundle.histories
    covs = [c for c in bundle.report["covariates"] if c in z] if z else []
    if not covs:
        cim = nelson_aalen(counting_processes(hs))
        return cim, aalen_johansen(cim), None
    rec = _recipe(profile_doc.get("intensity_terms"),
                  _type_recipe(_observed_types(hs), covs, time_bases=()))
    fit = fit_cox(hs, CoxSpec(rec))
    cim, path = predict_profile(fit, z, bundle.horizon)
    return cim, path, fit


def _resolved(args, bundle=None, extra=None):
    skip = {"func", "out", "workers"}
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    if bundle is not None:
        cfg["data_report"] = bundle.report
    if extra:
        cfg.update(extra)
    return cfg


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args):
    started = time.time()
    spec = get_scenario(args.scenario)
    changes = {}
    if args.n is not None:
        changes["n"] = args.n
    if args.seed is not None:
        changes["seed"] = args.seed
    if changes:
        spec = spec.replace(**changes)
    cohort = simulate_cohort(spec, args.replicate)
    out = _out_dir(args)
    write_cohort(out, cohort.histories, cohort.costs, cohort.panels, spec.state_space)
    report = {"command": "simulate", "config": _resolved(args, extra={"scenario": spec.to_dict()}),
              "result": {"subjects": cohort.n,
                         "events": int(sum(len(h.events) for h in cohort.histories)),
                         "censored": int(sum(h.is_censored for h in cohort.histories))}}
    _emit(args, "simulate", report, started)
    return 0


def cmd_estimate(args):
    started = time.time()
    profile_doc = _load_json(args.profile)
    tau = args.tau if args.tau is not None else profile_doc.get("tau")
    r = args.r if args.r is not None else profile_doc.get("r", 0.0)
    if tau is None or not tau > 0:
        raise UsageError("a positive --tau is required")
    if r < 0:
        raise UsageError("--r must be nonnegative")
    grid = _grid(args, tau)
    bundle = ingest(args.data, tau)
    est = args.estimator
    hs = bundle.histories
    tables = {}
    if est == "km":
        fit = survival_fit(hs)
        t = fit.event_times
        result = {"times": t.tolist(), "survival": fit.survival(t).tolist(),
                  "n_at_risk": fit.n_at_risk(t).tolist(), "n_events": fit.n_events.tolist(),
                  "discounted_life_expectancy": discounted_life_expectancy(fit, r, tau)}
        tables["km"] = [{"time": float(a), "survival": float(b), "n_at_risk": float(c)}
                        for a, b, c in zip(t, result["survival"], result["n_at_risk"])]
    elif est == "aj":
        cim = nelson_aalen(counting_processes(hs))
        path = aalen_johansen(cim)
        times = _floats(args.times) if args.times else (grid or [tau])
        m = bundle.state_space.n_states
        result = {"times": times, "P": [path.at(t).tolist() for t in times],
                  "max_row_sum_error": path.row_sum_error()}
        tables["aj"] = [{"time": float(t), "from": i, "to": j, "p": float(P[i, j])}
                        for t, P in zip(path.times, path.matrices)
                        for i in range(m) for j in range(m)]
    elif est == "cox":
        z = profile_doc.get("covariates") or {c: 0.0 for c in bundle.report["covariates"]}
        _, _, fit = _intensity_model(bundle, profile_doc, z)
        if fit is None:
            raise UsageError("cox needs covariates in subjects.csv")
        result = fit.summary()
    elif est == "bt":
        ts, u, y = total_cost_triples(hs, bundle.costs, r)
        result = {"npv": bang_tsiatis_npv(ts, u, y, 0.0, tau, form=args.form or "ipcw"),
                  "form": args.form or "ipcw", "n": len(hs)}
    elif est == "strawderman":
        form = args.form or "direct"
        result = {"npv": strawderman_npv(bundle.costs, bundle.event_times, bundle.censor_times,
                                         r, tau, form=form), "form": form, "n": len(hs)}
    elif est == "lin":
        stored = bundle.panels
        if stored is not None and r == 0 and (grid is None or np.array_equal(grid, stored.grid)):
            panels = stored
        else:
            if grid is None:
                raise UsageError("lin needs --grid (or panel.csv with r = 0)")
            panels = build_panel_set(bundle.costs, bundle.event_times, bundle.censor_times, grid, r)
        result = {"npv": lin_interval_npv(panels, bundle.event_times, bundle.censor_times),
                  "grid": panels.grid.tolist(), "n": len(hs)}
    elif est in ("gls", "gee"):
        data = _regression_data(bundle, args, profile_doc)
        w = _weights(bundle, data, args)
        if est == "gls":
            fit = fit_weighted_gls(data, w, args.omega)
        else:
            fit = fit_weighted_gee(data, w, link=args.link, working=args.omega)
        result = fit.summary()
        result["confidence_intervals"] = fit.confidence_intervals().tolist()
    elif est == "npv":
        result, tables = _npv(bundle, args, profile_doc, r, tau, grid)
    else:  # qaly
        q = profile_doc.get("quality")
        if not q:
            raise UsageError("qaly needs quality weights in --profile")
        z = profile_doc.get("covariates") or {}
        _, path, _ = _intensity_model(bundle, profile_doc, z)
        init = _initial(bundle, profile_doc)
        weights = QualityWeights({int(k): float(v) for k, v in q.items()})
        result = {"qaly": qaly(weights, path, init, r, tau, bundle.state_space),
                  "initial": init.probs.tolist()}
    report = {"command": "estimate", "estimator": est,
              "config": _resolved(args, bundle, {"tau": tau, "r": r, "profile_doc": profile_doc}),
              "result": result}
    _emit(args, f"estimate-{est}", report, started)
    out = _out_dir(args)
    for name, rows in tables.items():
        write_table(os.path.join(out, f"estimate-{est}-{name}.csv"), rows)
    return 0


def _initial(bundle, profile_doc):
    if profile_doc.get("initial") is not None:
        return InitialDistribution(np.asarray(profile_doc["initial"], dtype=float))
    return empirical_initial_distribution(bundle.histories)


def _npv(bundle, args, profile_doc, r, tau, grid):
    hs = bundle.histories
    ss = bundle.state_space
    z = profile_doc.get("covariates") or {}
    label = profile_doc.get("label", "profile")
    cim, path, _ = _intensity_model(bundle, profile_doc, z)
    gfit = censoring_survival(hs, args.strata)
    types = _observed_types(hs)
    covs = [c for c in bundle.report["covariates"] if c in z]
    costs = None
    if types:
        rec = _recipe(profile_doc.get("cost_terms"), _type_recipe(types, covs))
        data = transition_cost_data(hs, rec, args.strata)
        cfit = fit_weighted_gls(data, ipc_weights(data, gfit, tau), args.omega)
        costs = TransitionCostModel(cfit, rec, frozenset(types))
    rates = None
    if bundle.costs.piece_start.size:
        if grid is None:
            raise UsageError("sojourn costs present: npv needs --grid for the rate model")
        occ = interval_occupancy_data(hs, bundle.costs, grid, strata=args.strata)
        ofit = fit_weighted_gls(occ, ipc_weights(occ, gfit, tau), "identity")
        rates = PiecewiseRates.from_occupancy_fit(ofit, grid, list(ss.transient), ss.n_states)
    init = _initial(bundle, profile_doc)
    prof = CovariateProfile(dict(z), label)
    report = npv_profile(cim, path, init, r, tau, costs, rates, prof)
    result = report.to_dict()
    tables = {"rows": report.rows()}
    if args.r_grid:
        sweep = []
        for rr in _floats(args.r_grid):
            rep = npv_profile(cim, path, init, rr, tau, costs, rates, prof)
            sweep.append({"r": rr, "transition": rep.transition, "sojourn": rep.sojourn,
                          "total": rep.total})
        result["r_sweep"] = sweep
        tables["r-sweep"] = sweep
    return result, tables


def cmd_study(args):
    started = time.time()
    spec = get_scenario(args.scenario)
    changes = {}
    if args.n is not None:
        changes["n"] = args.n
    if args.seed is not None:
        changes["seed"] = args.seed
    if changes:
        spec = spec.replace(**changes)
    ests = tuple(e for e in args.estimators.split(",") if e)
    profile = _load_json(args.profile).get("covariates") if args.profile else None
    cfg = StudyConfig(spec, args.replicates, ests, args.workers, profile, args.convention,
                      args.omega)
    res = run_study(cfg)
    out = _out_dir(args)
    summary = {"command": "study", "config": res["config"], "targets": res["targets"],
               "summary": res["summary"]}
    _emit(args, "study-summary", summary, started)
    rows = []
    for k, rep in enumerate(res["replicates"]):
        row = {"replicate": k}
        for name, v in rep.items():
            if isinstance(v, dict):
                for nm, b, s in zip(v["names"], v["beta"], v["se"]):
                    row[f"{name}:{nm}"] = b
                    row[f"{name}:{nm}:se"] = s
            else:
                row[name] = v
        rows.append(row)
    write_table(os.path.join(out, "study-replicates.csv"), rows)
    return 0


def cmd_check(args):
    started = time.time()
    histories = None
    if args.data:
        if args.tau is None:
            raise UsageError("--data needs --tau")
        histories = ingest(args.data, args.tau).histories
    else:
        spec = get_scenario(args.scenario)
        histories = simulate_cohort(spec.replace(n=args.n, seed=args.seed)).histories
    res = run_identity_suite(args.seed, args.datasets, args.max_n, histories)
    ok = all(v["pass"] for v in res.values())
    report = {"command": "check", "config": _resolved(args), "result": res, "pass": ok}
    _emit(args, "check", report, started)
    if not ok:
        failed = [k for k, v in res.items() if not v["pass"]]
        print(json.dumps({"error": "IdentityFailure", "invariant": failed[0],
                          "failed": failed}), file=sys.stderr)
        return 1
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser():
    p = argparse.ArgumentParser(prog="transcost", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", help=f"output directory (default ${ENV_OUT} or ./transcost-out)")

    s = sub.add_parser("simulate", help="simulate a cohort and write its CSV files")
    common(s)
    s.add_argument("--scenario", required=True, help="scenario JSON or a built-in name")
    s.add_argument("--replicate", type=int, default=0)
    s.add_argument("--n", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="run one estimator on a cohort directory")
    common(e)
    e.add_argument("estimator", choices=ESTIMATE_CHOICES)
    e.add_argument("--data", required=True, help="cohort directory")
    e.add_argument("--tau", type=float)
    e.add_argument("--r", type=float)
    e.add_argument("--grid", help="comma-separated interval grid from 0 to tau")
    e.add_argument("--times", help="comma-separated evaluation times (aj)")
    e.add_argument("--strata", help="discrete covariate for stratified censoring weights")
    e.add_argument("--form", help="bt: ipcw|survival_weighted; strawderman: direct|dual")
    e.add_argument("--target", choices=("transitions", "occupancy", "single", "records"),
                   default="transitions", help="gls/gee response")
    e.add_argument("--link", choices=("identity", "log"), default="identity")
    e.add_argument("--omega", choices=("identity", "re"), default="identity",
                   help="working covariance")
    e.add_argument("--convention", choices=("observed", "lin"), default="observed",
                   help="single-event record and weight convention")
    e.add_argument("--profile", help="profile JSON (covariates, terms, quality, initial)")
    e.add_argument("--r-grid", dest="r_grid", help="npv: comma-separated discount rates")
    e.set_defaults(func=cmd_estimate)

    st = sub.add_parser("study", help="Monte Carlo replication study against the oracle")
    common(st)
    st.add_argument("--scenario", required=True)
    st.add_argument("--replicates", type=int, default=100)
    st.add_argument("--workers", type=int, default=1)
    st.add_argument("--estimators", default="bt,strawderman,npv,lin,gls",
                    help=f"comma-separated subset of {','.join(ESTIMATORS)}")
    st.add_argument("--n", type=int)
    st.add_argument("--seed", type=int)
    st.add_argument("--profile")
    st.add_argument("--convention", choices=("observed", "lin"), default="observed")
    st.add_argument("--omega", choices=("identity", "re"), default="identity")
    st.set_defaults(func=cmd_study)

    c = sub.add_parser("check", help="run the identity suite")
    common(c)
    c.add_argument("--data", help="also check Aalen-Johansen row sums on this cohort")
    c.add_argument("--tau", type=float)
    c.add_argument("--scenario", default="illness-death")
    c.add_argument("--n", type=int, default=500)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--datasets", type=int, default=200)
    c.add_argument("--max-n", dest="max_n", type=int, default=50)
    c.set_defaults(func=cmd_check)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TranscostError as exc:
        print(json.dumps(exc.to_dict(), sort_keys=True), file=sys.stderr)
        return 1
    except (ValueError, OSError, KeyError) as exc:
        print(json.dumps({"error": type(exc).__name__, "invariant": type(exc).__name__,
                          "message": str(exc)}, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
