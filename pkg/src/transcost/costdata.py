"""Builders that turn observed histories and cost processes into regression data."""

from __future__ import annotations

import numpy as np

from .cost_estimators import as_cost_table
from .errors import EmptySample
from .regression import CostRegressionData


def _covariate_columns(histories, names, subj, t):
    out = {}
    for name in names:
        out[name] = np.array([histories[i].covariate(name, tt) for i, tt in zip(subj, t)],
                             dtype=float)
    return out


def _strata_labels(histories, strata):
    if strata is None:
        return None
    return tuple(h.covariate(strata) for h in histories)


def transition_cost_data(histories, recipe, strata=None):
    """One record per observed transition with its cost as the response.

    Subjects without observed transitions contribute no block.  Design rows
    come from ``recipe`` evaluated at the transition time.
    """
    rows = [(i, ev.time, ev.from_state, ev.to_state, ev.cost)
            for i, h in enumerate(histories) for ev in h.events]
    if not rows:
        raise EmptySample("no observed transitions")
    subj = np.array([r[0] for r in rows])
    t = np.array([r[1] for r in rows], dtype=float)
    frm = np.array([r[2] for r in rows])
    to = np.array([r[3] for r in rows])
    y = np.array([r[4] for r in rows], dtype=float)
    cov = _covariate_columns(histories, sorted(recipe.covariates_used()), subj, t)
    X = np.zeros((t.size, recipe.p))
    for (h, j) in {(int(a), int(b)) for a, b in zip(frm, to)}:
        m = (frm == h) & (to == j)
        X[m] = recipe.matrix(h, j, {k: v[m] for k, v in cov.items()}, t[m])
    keep = np.unique(subj)
    relabel = np.searchsorted(keep, subj)
    labels = _strata_labels([histories[i] for i in keep], strata)
    return CostRegressionData(y, X, t, np.ones(t.size), relabel, labels, recipe.names)


def interval_occupancy_data(histories, costs, grid, states=None, strata=None):
    """Sojourn cost per grid interval against time spent in each state.

    For subject ``i`` and interval ``(a_{g-1}, a_g]`` with ``T_i > a_{g-1}``
    the response is the accrued sojourn cost over ``(a_{g-1}, min(a_g, T_i)]``
    and the design has one column per (state, interval) holding the
    occupancy time.  A record is observed when ``U_i >= min(a_g, T_i)``.
    Records after censoring keep zero cost and design; they carry weight 0.
    ``costs`` is a :class:`CostTable` or a sequence of cost processes; only
    the accrual part is used.

    Returns
    -------
    CostRegressionData
        Column ``(h, g)`` estimates the constant accrual rate of state ``h``
        on interval ``g``.
    """
    grid = np.asarray(grid, dtype=float)
    if not histories:
        raise EmptySample("no histories supplied")
    table = as_cost_table(costs)
    ss = histories[0].state_space
    states = list(ss.transient) if states is None else list(states)
    col = {h: k for k, h in enumerate(states)}
    G = grid.size - 1
    n = len(histories)
    lo, hi = grid[:-1], grid[1:]
    T = np.array([h.absorption_time for h in histories])
    U = np.array([h.censor_time for h in histories], dtype=float)
    alive = T[:, None] > lo[None, :]
    ends = np.minimum(hi[None, :], T[:, None])
    obs = alive & (U[:, None] >= ends)

    occ = np.zeros((n, len(states) * G))
    so = [(i, h, a, b) for i, hist in enumerate(histories)
          for (h, a, b, _) in hist.sojourns() if h in col]
    if so:
        si = np.array([s[0] for s in so])
        sc = np.array([col[s[1]] for s in so])
        sa = np.array([s[2] for s in so], dtype=float)
        sb = np.array([s[3] for s in so], dtype=float)
        for g in range(G):
            ov = np.clip(np.minimum(sb, hi[g]) - np.maximum(sa, lo[g]), 0, None)
            np.add.at(occ, (si, sc * G + g), ov)
    y = np.column_stack([table.accumulated(ends[:, g], lumps=False)
                         - table.accumulated(lo[g], lumps=False) for g in range(G)])

    ri, rg = np.nonzero(alive)
    X = np.zeros((ri.size, occ.shape[1]))
    cols = np.array([[col[h] * G + g for h in states] for g in range(G)])
    for k in range(len(states)):
        c = cols[rg, k]
        X[np.arange(ri.size), c] = occ[ri, c]
    o = obs[ri, rg]
    X[~o] = 0.0
    yy = np.where(o, np.maximum(y[ri, rg], 0.0), 0.0)
    keep, subj = np.unique(ri, return_inverse=True)
    names = [f"rate[{h}]:({grid[g]:g},{grid[g + 1]:g}]" for h in states for g in range(G)]
    return CostRegressionData(yy, X, ends[ri, rg], o.astype(float), subj,
                              _strata_labels([histories[i] for i in keep], strata), names)


def sojourn_log_rate_data(histories, processes, recipe, strata=None, min_length=1e-9):
    """Log accrual rate per completed sojourn, ``log(cost / length)``.

    The design row for a sojourn in state ``h`` is ``recipe.matrix(h, h, ...)``
    evaluated at the sojourn end.  Only sojourns that end in a transition and
    accrue positive cost are used.
    """
    rows = []
    for i, (hist, proc) in enumerate(zip(histories, processes)):
        for (h, a, b, j) in hist.sojourns():
            if j is None or b - a <= min_length:
                continue
            s, e, v = proc.pieces()
            cost = float(np.sum(v * np.clip(np.minimum(e, b) - np.maximum(s, a), 0, None)))
            if cost > 0:
                rows.append((i, h, b, np.log(cost / (b - a))))
    if not rows:
        raise EmptySample("no completed sojourn with positive cost")
    subj = np.array([r[0] for r in rows])
    st = np.array([r[1] for r in rows])
    t = np.array([r[2] for r in rows], dtype=float)
    y = np.array([r[3] for r in rows], dtype=float)
    cov = _covariate_columns(histories, sorted(recipe.covariates_used()), subj, t)
    X = np.zeros((t.size, recipe.p))
    for h in np.unique(st):
        m = st == h
        X[m] = recipe.matrix(int(h), int(h), {k: v[m] for k, v in cov.items()}, t[m])
    keep = np.unique(subj)
    labels = _strata_labels([histories[i] for i in keep], strata)
    return CostRegressionData(y, X, t, np.ones(t.size), np.searchsorted(keep, subj), labels,
                              recipe.names)


def single_transition_data(times, censor_times, costs, tau, design, convention="observed",
                           strata=None):
    """One record per subject for a cost incurred at a single event.

    Parameters
    ----------
    times, censor_times, costs : array-like
        ``T_i``, ``U_i`` and the cost ``y_i``.
    design : callable
        ``design(i, t)`` returning the design row of subject ``i`` at ``t``.
    convention : {"observed", "lin"}
        ``observed`` flags ``s_i = [T_i <= min(U_i, tau)]`` with the record at
        ``T_i``.  ``lin`` flags ``s_i = [U_i >= min(T_i, tau)]`` with the record
        at ``min(T_i, tau)``, so subjects still event-free at ``tau`` contribute
        their cost up to ``tau``.
    """
    t = np.asarray(times, dtype=float)
    u = np.asarray(censor_times, dtype=float)
    y = np.asarray(costs, dtype=float)
    if convention == "observed":
        rec = t
        s = (t <= u) & (t <= tau)
    elif convention == "lin":
        rec = np.minimum(t, tau)
        s = u >= rec
    else:
        raise ValueError(f"unknown convention {convention!r}")
    rec = np.where(np.isfinite(rec), rec, tau)
    X = np.vstack([np.asarray(design(i, rec[i]), dtype=float) for i in range(t.size)])
    return CostRegressionData(np.where(s, y, 0.0), X, rec, s.astype(float),
                              np.arange(t.size), strata)
