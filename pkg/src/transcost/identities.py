"""Exact algebraic identities used as self-checks.

Each check returns the largest absolute discrepancy found; the suite
compares them with fixed tolerances.
"""

from __future__ import annotations

import numpy as np

from .cost_estimators import CostTable, bang_tsiatis_npv, strawderman_npv
from .event_history import counting_processes
from .markov import aalen_johansen, nelson_aalen
from .regression import CostRegressionData, fit_weighted_gls, ols
from .survival import censoring_km, kaplan_meier

TOLERANCES = {"bt_forms": 1e-10, "km_duality": 1e-12, "aj_row_sums": 1e-12,
              "gls_ols": 1e-10, "strawderman_dual": 1e-10}


def random_single_event_data(rng, n, censored_fraction=0.4):
    """Tie-free ``(T, U, y)`` with continuous times and positive costs."""
    t = rng.exponential(1.0, n)
    u = np.where(rng.random(n) < censored_fraction, rng.exponential(1.5, n), np.inf)
    y = rng.gamma(2.0, 50.0, n)
    return t, u, y


def bt_form_gap(t, u, y, r, tau):
    a = bang_tsiatis_npv(t, u, y, r, tau, form="ipcw")
    b = bang_tsiatis_npv(t, u, y, r, tau, form="survival_weighted")
    return abs(a - b)


def km_duality_gap(t, u):
    """``max |Ŝ(x-)Ĝ(x-) - Y_0(x)/n|`` over the observed times ``x``."""
    x = np.minimum(t, u)
    fit = kaplan_meier(x, t <= u)
    g = censoring_km(t, u)
    pts = np.unique(x[np.isfinite(x)])
    lhs = fit.left(pts) * g.left(pts)
    rhs = fit.n_at_risk(pts) / t.size
    return float(np.max(np.abs(lhs - rhs))) if pts.size else 0.0


def aj_row_sum_gap(histories):
    path = aalen_johansen(nelson_aalen(counting_processes(histories)))
    return float(path.row_sum_error())


def gls_ols_gap(X, y, subject=None):
    """Unit weights and identity working covariance against plain OLS."""
    n = y.size
    subject = np.arange(n) if subject is None else np.asarray(subject)
    data = CostRegressionData(y, X, np.arange(n, dtype=float), np.ones(n), subject)
    fit = fit_weighted_gls(data, np.ones(n), "identity")
    return float(np.max(np.abs(fit.beta - ols(X, y))))


def random_cost_table(rng, t, u, n_lumps=3, n_pieces=2):
    """Lumps strictly off the event times plus random accrual pieces."""
    n = t.size
    end = np.minimum(np.minimum(t, u), 10.0)
    ls, lt, lc, ps, pa, pb, pr = [], [], [], [], [], [], []
    for i in range(n):
        k = rng.integers(0, n_lumps + 1)
        times = rng.uniform(0, end[i], k) if end[i] > 0 else np.empty(0)
        ls += [i] * times.size
        lt += list(times)
        lc += list(rng.gamma(2.0, 10.0, times.size))
        edges = np.sort(rng.uniform(0, end[i], 2 * n_pieces))
        for a, b in zip(edges[::2], edges[1::2]):
            ps.append(i)
            pa.append(a)
            pb.append(b)
            pr.append(rng.gamma(2.0, 5.0))
    return CostTable(n, ls, lt, lc, ps, pa, pb, pr)


def strawderman_form_gap(table, t, u, r, tau):
    a = strawderman_npv(table, t, u, r, tau, form="direct")
    b = strawderman_npv(table, t, u, r, tau, form="dual")
    return abs(a - b)


def run_identity_suite(seed=0, n_datasets=200, max_n=50, histories=None):
    """Run every identity on random tie-free data (and on ``histories``).

    Returns
    -------
    dict
        ``name -> {"max_error", "tolerance", "pass", "cases"}``.
    """
    rng = np.random.default_rng(seed)
    worst = {k: 0.0 for k in TOLERANCES}
    cases = {k: 0 for k in TOLERANCES}
    for _ in range(n_datasets):
        n = int(rng.integers(2, max_n + 1))
        t, u, y = random_single_event_data(rng, n)
        r = float(rng.uniform(0, 0.1))
        tau = float(rng.uniform(0.5, 3.0))
        worst["bt_forms"] = max(worst["bt_forms"], bt_form_gap(t, u, y, r, tau))
        worst["km_duality"] = max(worst["km_duality"], km_duality_gap(t, u))
        table = random_cost_table(rng, t, u)
        worst["strawderman_dual"] = max(worst["strawderman_dual"],
                                        strawderman_form_gap(table, t, u, r, tau))
        X = np.column_stack((np.ones(n), rng.normal(size=n)))
        worst["gls_ols"] = max(worst["gls_ols"], gls_ols_gap(X, y))
        for k in ("bt_forms", "km_duality", "strawderman_dual", "gls_ols"):
            cases[k] += 1
    if histories is not None:
        worst["aj_row_sums"] = aj_row_sum_gap(histories)
        cases["aj_row_sums"] = 1
    return {k: {"max_error": worst[k], "tolerance": TOLERANCES[k],
                "pass": bool(worst[k] <= TOLERANCES[k]), "cases": cases[k]}
            for k in TOLERANCES if cases[k]}
