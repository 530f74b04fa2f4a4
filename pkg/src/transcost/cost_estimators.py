"""Nonparametric estimators of the mean discounted cost under censoring.

Three families are provided:

* :func:`bang_tsiatis_npv` for a single cost incurred at the terminal
  transition, in its inverse-probability-weighted and survival-weighted forms;
* :func:`strawderman_npv` for costs accrued continuously or in lumps during
  the sojourn in the initial state, in its direct and dual forms;
* :func:`lin_interval_npv` for costs recorded on a fixed grid of intervals.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (EmptyRiskSetAtAccrual, EmptyRiskSetAtInterval, EmptySample,
                     GridMismatch, SharedJumpWarning, ZeroCensoringSurvival)
from .stepfn import StepFunction, cumulative_discounted_integral, discount_weights
from .survival import censoring_km, kaplan_meier

NOT_AT_RISK = 0
OBSERVED = 1
PARTIAL = 2


@dataclass(frozen=True)
class CostProcess:
    """Accumulated cost of one subject as lumps plus a piecewise-constant rate.

    Parameters
    ----------
    subject_id : object
    jumps : StepFunction
        Cumulative lump costs (nondecreasing, starting at 0).
    rate : StepFunction
        Accrual rate per unit time (nonnegative, eventually 0).
    initial_cost : float
        Cost incurred at time 0.
    """

    subject_id: object
    jumps: StepFunction
    rate: StepFunction
    initial_cost: float = 0.0

    def __post_init__(self):
        if self.jumps.initial_value != 0 or np.any(self.jumps.jumps < 0):
            raise ValueError(f"subject {self.subject_id}: lump costs must start at 0 and not decrease")
        if np.any(self.rate.values < 0) or self.rate.initial_value < 0:
            raise ValueError(f"subject {self.subject_id}: accrual rate must be nonnegative")
        if self.rate.final_value != 0:
            raise ValueError(f"subject {self.subject_id}: accrual must stop at a finite time")
        if self.initial_cost < 0:
            raise ValueError("initial cost must be nonnegative")

    @classmethod
    def from_lumps(cls, subject_id, times, costs, initial_cost=0.0):
        return cls(subject_id, StepFunction.from_increments(times, costs), StepFunction(),
                   initial_cost)

    @classmethod
    def from_pieces(cls, subject_id, lump_times=(), lump_costs=(), starts=(), ends=(),
                    rates=(), initial_cost=0.0):
        """Build from lumps and constant-rate pieces ``[start, end)``."""
        starts = np.asarray(starts, dtype=float)
        ends = np.asarray(ends, dtype=float)
        rates = np.asarray(rates, dtype=float)
        if np.any(ends < starts):
            raise ValueError("accrual pieces must have end >= start")
        rate = StepFunction.from_increments(np.concatenate((starts, ends)),
                                            np.concatenate((rates, -rates)))
        # cancel round-off from the running sum
        rate = rate.map(lambda v: np.where(np.abs(v) < 1e-12 * max(1.0, np.abs(rates).max(initial=0)),
                                           0.0, v))
        return cls(subject_id, StepFunction.from_increments(lump_times, lump_costs), rate,
                   initial_cost)

    def pieces(self):
        """Constant-rate pieces ``(starts, ends, rates)`` with nonzero rate."""
        jt = self.rate.jump_times
        starts = np.concatenate(([0.0], jt))
        ends = np.concatenate((jt, [np.inf]))
        vals = np.concatenate(([self.rate.initial_value], self.rate.values))
        nz = vals != 0
        return starts[nz], ends[nz], vals[nz]

    def accumulated(self, t, r=0.0):
        """Discounted accumulated cost ``V(t)`` over ``(0, t]`` (initial cost excluded)."""
        t = np.asarray(t, dtype=float)
        jt = self.jumps.jump_times
        dj = self.jumps.jumps
        keep = jt > 0
        jt, dj = jt[keep], dj[keep]
        disc = dj * np.exp(-r * jt) if r else dj
        csum = np.concatenate(([0.0], np.cumsum(disc)))
        lump = csum[np.searchsorted(jt, t, side="right")]
        cont = cumulative_discounted_integral(self.rate, r, t)
        out = lump + cont
        return float(out) if np.ndim(out) == 0 else out

    @property
    def v(self):
        """Undiscounted lump part of the accumulated cost as a step function."""
        return self.jumps

    def truncated(self, t):
        """The process as observed up to ``t`` (lumps in ``(0, t]``, accrual before ``t``)."""
        jumps = self.jumps.truncate(t)
        s, e, v = self.pieces()
        keep = s < t
        return CostProcess.from_pieces(self.subject_id, jumps.jump_times, jumps.jumps,
                                       s[keep], np.minimum(e[keep], t), v[keep],
                                       self.initial_cost)


@dataclass(frozen=True)
class CostTable:
    """Columnar cost processes of a cohort.

    Lumps are ``(subject, time, cost)`` triples; accrual pieces are
    ``(subject, start, end, rate)`` with the rate constant on ``[start, end)``.
    Subjects are numbered ``0..n-1``.
    """

    n: int
    lump_subject: np.ndarray
    lump_time: np.ndarray
    lump_cost: np.ndarray
    piece_subject: np.ndarray
    piece_start: np.ndarray
    piece_end: np.ndarray
    piece_rate: np.ndarray
    initial_cost: np.ndarray = None
    subject_ids: tuple = None

    def __post_init__(self):
        fix = object.__setattr__
        for name in ("lump_subject", "piece_subject"):
            fix(self, name, np.asarray(getattr(self, name), dtype=int).reshape(-1))
        for name in ("lump_time", "lump_cost", "piece_start", "piece_end", "piece_rate"):
            fix(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))
        init = np.zeros(self.n) if self.initial_cost is None else \
            np.asarray(self.initial_cost, dtype=float).reshape(-1)
        fix(self, "initial_cost", init)
        ids = tuple(range(self.n)) if self.subject_ids is None else tuple(self.subject_ids)
        fix(self, "subject_ids", ids)
        if init.size != self.n or len(ids) != self.n:
            raise ValueError("one initial cost and id per subject is required")
        if not (self.lump_subject.size == self.lump_time.size == self.lump_cost.size):
            raise ValueError("lump columns must have equal length")
        if not (self.piece_subject.size == self.piece_start.size == self.piece_end.size
                == self.piece_rate.size):
            raise ValueError("piece columns must have equal length")
        if np.any(self.lump_cost < 0) or np.any(self.piece_rate < 0) or np.any(init < 0):
            raise ValueError("costs and rates must be nonnegative")
        if np.any(self.piece_end < self.piece_start) or np.any(~np.isfinite(self.piece_end)):
            raise ValueError("accrual pieces must be finite with end >= start")
        for a in (self.lump_subject, self.piece_subject):
            if a.size and (a.min() < 0 or a.max() >= self.n):
                raise ValueError("subject index out of range")

    @classmethod
    def from_processes(cls, processes):
        ls, lt, lc, ps, pa, pb, pr = [], [], [], [], [], [], []
        for k, p in enumerate(processes):
            jt = p.jumps.jump_times
            dj = p.jumps.jumps
            ls.append(np.full(jt.size, k))
            lt.append(jt)
            lc.append(dj)
            a, b, v = p.pieces()
            if np.any(~np.isfinite(b)):
                raise ValueError(f"subject {p.subject_id}: accrual never stops")
            ps.append(np.full(a.size, k))
            pa.append(a)
            pb.append(b)
            pr.append(v)
        cat = (lambda x: np.concatenate(x) if x else np.empty(0))
        return cls(len(processes), cat(ls), cat(lt), cat(lc), cat(ps), cat(pa), cat(pb), cat(pr),
                   np.array([p.initial_cost for p in processes]),
                   tuple(p.subject_id for p in processes))

    def process(self, i):
        lm = self.lump_subject == i
        pm = self.piece_subject == i
        return CostProcess.from_pieces(self.subject_ids[i], self.lump_time[lm], self.lump_cost[lm],
                                       self.piece_start[pm], self.piece_end[pm],
                                       self.piece_rate[pm], float(self.initial_cost[i]))

    def processes(self):
        return [self.process(i) for i in range(self.n)]

    def accumulated(self, t, r=0.0, lumps=True, accrual=True):
        """``V_i(t_i)`` for every subject (``t`` is scalar or one time per subject).

        Lumps in ``(0, t_i]`` and accrual over ``(0, t_i]``, each discounted at
        its own time; initial costs excluded.
        """
        t = np.broadcast_to(np.asarray(t, dtype=float), (self.n,))
        out = np.zeros(self.n)
        if lumps and self.lump_time.size:
            lt = self.lump_time
            m = (lt > 0) & (lt <= t[self.lump_subject])
            c = self.lump_cost[m] * (np.exp(-r * lt[m]) if r else 1.0)
            out += np.bincount(self.lump_subject[m], weights=c, minlength=self.n)
        if accrual and self.piece_start.size:
            a = np.maximum(self.piece_start, 0.0)
            b = np.minimum(self.piece_end, t[self.piece_subject])
            m = b > a
            w = discount_weights(a[m], b[m], r) * self.piece_rate[m]
            out += np.bincount(self.piece_subject[m], weights=w, minlength=self.n)
        return out


def as_cost_table(costs):
    """Accept a :class:`CostTable` or a sequence of :class:`CostProcess`."""
    return costs if isinstance(costs, CostTable) else CostTable.from_processes(list(costs))


@dataclass(frozen=True)
class CostPanel:
    """Interval costs of one subject on a fixed grid ``a_0 < ... < a_G``.

    ``increments[g]`` holds the cost over interval ``g`` when it is fully
    observed, the partial cost up to censoring when the subject was censored
    inside it, and 0 when the subject was not at risk at its start.
    ``observed`` uses the codes ``NOT_AT_RISK``, ``OBSERVED`` and ``PARTIAL``.
    """

    subject_id: object
    grid: np.ndarray
    increments: np.ndarray
    observed: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        inc = np.asarray(self.increments, dtype=float)
        obs = np.asarray(self.observed, dtype=int)
        if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing with at least two points")
        if inc.shape != (grid.size - 1,) or obs.shape != inc.shape:
            raise ValueError("one increment and one flag per interval are required")
        if np.any(inc < 0):
            raise ValueError(f"subject {self.subject_id}: negative interval cost")
        if not np.all(np.isin(obs, (NOT_AT_RISK, OBSERVED, PARTIAL))):
            raise ValueError("observed flags must be 0, 1 or 2")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "increments", inc)
        object.__setattr__(self, "observed", obs)

    @property
    def at_risk(self):
        return self.observed != NOT_AT_RISK


@dataclass(frozen=True)
class PanelSet:
    """Interval panels of a whole cohort as matrices (subjects × intervals)."""

    grid: np.ndarray
    increments: np.ndarray
    observed: np.ndarray
    subject_ids: tuple = None

    def __len__(self):
        return self.increments.shape[0]

    def panels(self):
        ids = self.subject_ids or tuple(range(len(self)))
        return [CostPanel(ids[k], self.grid, self.increments[k], self.observed[k])
                for k in range(len(self))]

    @classmethod
    def from_panels(cls, panels):
        if not panels:
            raise EmptySample("no panels supplied")
        grid = panels[0].grid
        for p in panels[1:]:
            if p.grid.shape != grid.shape or np.any(p.grid != grid):
                raise GridMismatch("panels do not share a common grid", subject=p.subject_id)
        return cls(grid, np.stack([p.increments for p in panels]),
                   np.stack([p.observed for p in panels]),
                   tuple(p.subject_id for p in panels))


def build_panel_set(costs, event_times, censor_times, grid, r=0.0):
    """Interval panels from cost processes and ``(T_i, U_i)``.

    A subject is at risk for interval ``(a_{g-1}, a_g]`` when ``T_i >= a_{g-1}``
    and, for ``g > 1``, ``U_i > a_{g-1}``.  The interval is fully observed when
    ``min(T_i, a_g) <= U_i``; otherwise the cost up to ``U_i`` is recorded.
    ``costs`` is a :class:`CostTable` or a sequence of :class:`CostProcess`.
    """
    table = as_cost_table(costs)
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing with at least two points")
    t = np.asarray(event_times, dtype=float)[:, None]
    u = np.asarray(censor_times, dtype=float)[:, None]
    lo, hi = grid[None, :-1], grid[None, 1:]
    risk = (t >= lo) & ((u > lo) | (lo == grid[0]))
    full = np.minimum(t, hi) <= u
    flags = np.where(risk, np.where(full, OBSERVED, PARTIAL), NOT_AT_RISK)
    end = np.maximum(np.minimum(np.minimum(hi, t), u), lo)
    inc = np.column_stack([table.accumulated(end[:, g], r) - table.accumulated(grid[g], r)
                           for g in range(grid.size - 1)])
    inc = np.where(risk, np.maximum(inc, 0.0), 0.0)
    return PanelSet(grid, inc, flags, table.subject_ids)


def build_panels(costs, event_times, censor_times, grid, r=0.0):
    """List-of-:class:`CostPanel` form of :func:`build_panel_set`."""
    return build_panel_set(costs, event_times, censor_times, grid, r).panels()


def _check_sample(*arrays):
    n = arrays[0].size
    if n == 0:
        raise EmptySample("no subjects supplied")
    for a in arrays[1:]:
        if a.size != n:
            raise ValueError("input arrays must have the same length")


def bang_tsiatis_npv(times, censor_times, costs, r, tau, form="ipcw"):
    """Mean discounted cost incurred at a single terminal event.

    Parameters
    ----------
    times : array-like
        Event times ``T_i`` (``inf`` when the event never occurs).
    censor_times : array-like
        Censoring times ``U_i`` (``inf`` when uncensored).
    costs : array-like
        Cost ``y_i`` at the event; only read where the event is observed,
        i.e. ``T_i <= min(U_i, tau)``.
    r : float
        Continuous discount rate.
    tau : float
        Horizon.
    form : {"ipcw", "survival_weighted"}
        ``ipcw`` weights each observed cost by ``1 / Ĝ(T_i-)``;
        ``survival_weighted`` sums ``Ŝ(t-) d_t ȳ_t / Y_0(t)`` over the
        distinct observed event times, with ``ȳ_t`` the mean cost of the
        ``d_t`` events tied at ``t``.

    Returns
    -------
    float
    """
    t = np.asarray(times, dtype=float).reshape(-1)
    u = np.asarray(censor_times, dtype=float).reshape(-1)
    y = np.asarray(costs, dtype=float).reshape(-1)
    _check_sample(t, u, y)
    if r < 0:
        raise ValueError("discount rate must be nonnegative")
    obs = (t <= u) & (t <= tau)
    if np.any(np.isnan(y[obs])):
        raise ValueError("observed events must carry a cost")
    disc = np.exp(-r * t[obs]) * y[obs]
    n = t.size
    if form == "ipcw":
        g = censoring_km(t, u).left(t[obs])
        if np.any(g <= 0):
            raise ZeroCensoringSurvival("Ĝ(T-) = 0 at an observed event time",
                                        time=float(t[obs][np.argmax(g <= 0)]))
        return float(np.sum(disc / g) / n)
    if form == "survival_weighted":
        fit = kaplan_meier(np.minimum(t, u), t <= u)
        te = t[obs]
        uniq, inv = np.unique(te, return_inverse=True)
        d = np.bincount(inv, minlength=uniq.size)
        total = np.bincount(inv, weights=disc, minlength=uniq.size)
        y0 = fit.n_at_risk(uniq)
        # d_j * mean cost = total cost at the tied time
        return float(np.sum(fit.left(uniq) * total / y0)) if d.size else 0.0
    raise ValueError(f"unknown form {form!r}")


def total_cost_triples(histories, costs, r):
    """``(T*, U, V(T*))`` for the total discounted cost up to ``T* = min(T, τ)``.

    The cost is only defined where ``T* <= U``.  Pass the result to
    :func:`bang_tsiatis_npv` with ``r = 0`` since the costs are already
    discounted.
    """
    tstar = np.array([min(h.absorption_time, h.horizon) for h in histories])
    u = np.array([h.censor_time for h in histories], dtype=float)
    table = as_cost_table(costs)
    v = table.initial_cost + table.accumulated(np.where(np.isfinite(tstar), tstar, 0.0), r)
    return tstar, u, np.where(tstar <= u, v, np.nan)


def strawderman_npv(processes, times, censor_times, r, tau, form="direct"):
    """Mean discounted cost accrued before a terminal event.

    Parameters
    ----------
    processes : CostTable or sequence of CostProcess
        Observed cost processes; anything after ``min(T_i, U_i)`` is ignored.
    times, censor_times : array-like
        ``T_i`` and ``U_i``.
    r, tau : float
        Discount rate and horizon.
    form : {"direct", "dual"}
        ``direct`` integrates ``Ŝ(t-)`` against the pooled increment
        ``dm̂(t) = Σ_i Y_i(t) dV_i(t) / Y_0(t)``.  ``dual`` evaluates
        ``Σ m̂(T_i) Ŝ(T_i-)/Y_0(T_i)`` over observed events plus
        ``m̂(tau) Ŝ(tau)``.

    Notes
    -----
    Each cost increment is discounted at its own accrual time.  The dual
    form is exact when ``m̂`` is right-continuous; when a lump cost falls on
    an observed event time a :class:`SharedJumpWarning` is issued and the
    direct form should be preferred.
    """
    t = np.asarray(times, dtype=float).reshape(-1)
    u = np.asarray(censor_times, dtype=float).reshape(-1)
    _check_sample(t, u)
    if r < 0:
        raise ValueError("discount rate must be nonnegative")
    n = t.size
    x = np.minimum(t, u)
    event = t <= u
    fit = kaplan_meier(x, event)
    end = np.minimum(x, tau)

    # pooled lump costs at times u with Y_i(u) = 1, u in (0, end_i]
    table = as_cost_table(processes)
    if table.n != n:
        raise ValueError("one cost process per subject is required")
    init = float(table.initial_cost.sum())
    m = (table.lump_time > 0) & (table.lump_time <= end[table.lump_subject])
    lt, lc = table.lump_time[m], table.lump_cost[m]
    m = table.piece_start < end[table.piece_subject]
    pst = table.piece_start[m]
    pen = np.minimum(table.piece_end[m], end[table.piece_subject[m]])
    prt = table.piece_rate[m]
    lump_y0 = fit.n_at_risk(lt)
    if np.any((lump_y0 <= 0) & (lc != 0)):
        raise EmptyRiskSetAtAccrual("cost accrued while the risk set is empty")
    lump_mass = lc * np.exp(-r * lt) / np.where(lump_y0 > 0, lump_y0, 1.0)
    # aggregate accrual rate and the density of the continuous part of m̂
    has_rate = pst.size > 0
    if has_rate:
        agg = StepFunction.from_increments(np.concatenate((pst, pen)),
                                           np.concatenate((prt, -prt)))
    else:
        agg = StepFunction()
    inv_risk = fit.at_risk.map(lambda v: np.where(v > 0, 1.0 / np.maximum(v, 1), 0.0))
    dens = agg * inv_risk

    if form == "direct":
        jump_part = float(np.sum(fit.left(lt) * lump_mass))
        cont_part = cumulative_discounted_integral(dens * fit.survival, r, tau) if has_rate else 0.0
        return float(init / n + jump_part + cont_part)
    if form == "dual":
        ev = event & (t <= tau)
        te = t[ev]
        shared = np.intersect1d(lt[lc != 0], te)
        if shared.size:
            warnings.warn(f"{shared.size} lump cost(s) coincide with event times; "
                          "the direct form is authoritative", SharedJumpWarning, stacklevel=2)

        def m_hat(q):
            q = np.atleast_1d(np.asarray(q, dtype=float))
            order = np.argsort(lt)
            ls, lm = lt[order], np.cumsum(lump_mass[order])
            idx = np.searchsorted(ls, q, side="right")
            lumps = np.where(idx > 0, lm[np.maximum(idx - 1, 0)] if lm.size else 0.0, 0.0)
            cont = cumulative_discounted_integral(dens, r, q) if has_rate else 0.0
            return lumps + cont

        uniq, d = np.unique(te, return_counts=True)
        body = np.sum(d * m_hat(uniq) * fit.left(uniq) / fit.n_at_risk(uniq)) if uniq.size else 0.0
        tail = float(m_hat(tau)[0] * fit(tau))
        return float(init / n + body + tail)
    raise ValueError(f"unknown form {form!r}")


def lin_interval_npv(panels, times, censor_times):
    """Grid estimator ``Σ_g Ŝ(a_{g-1}-) Σ_i Y_i(a_{g-1}) Ṽ_ig / Y_0(a_{g-1})``.

    ``Y_i(a_{g-1})`` is read from the panel flags and ``Ŝ`` is the
    product-limit estimate from ``(T_i, U_i)``.
    """
    ps = panels if isinstance(panels, PanelSet) else PanelSet.from_panels(list(panels))
    grid = ps.grid
    t = np.asarray(times, dtype=float).reshape(-1)
    u = np.asarray(censor_times, dtype=float).reshape(-1)
    if t.size != len(ps) or u.size != t.size:
        raise ValueError("one (T, U) pair per panel is required")
    fit = kaplan_meier(np.minimum(t, u), t <= u)
    risk = ps.observed != NOT_AT_RISK
    inc = ps.increments
    y0 = risk.sum(axis=0)
    total = np.where(risk, inc, 0.0).sum(axis=0)
    empty = (y0 == 0) & (inc.sum(axis=0) > 0)
    if empty.any():
        raise EmptyRiskSetAtInterval("cost observed in an interval with an empty risk set",
                                     interval=int(np.argmax(empty)))
    s = fit.left(grid[:-1])
    means = np.divide(total, y0, out=np.zeros_like(total), where=y0 > 0)
    return float(np.sum(s * means))

