"""Scenario simulation and high-accuracy oracles for the true NPV.

Intensities are piecewise constant in time on ``breaks`` and log-linear in
the covariates.  Transition costs have mean ``c0 + c1 t + δ'z`` times a
unit-mean lognormal factor.  Sojourn costs accrue at a piecewise-constant
rate per state, optionally scaled by a unit-mean lognormal subject effect.
Censoring is independent of the path.

Every subject draws from its own random stream derived from
``(seed, replicate, subject index)``, so a cohort does not depend on how
replicates or subjects are scheduled.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .cost_estimators import CostTable, build_panel_set
from .errors import InvalidSpec, NoConvergence
from .event_history import EventHistory, StateSpace, TransitionEvent
from .markov import propagate
from .stepfn import StepFunction

# --------------------------------------------------------------------------
# scenario


def _key(s):
    if isinstance(s, str):
        h, j = s.replace("->", ",").split(",")
        return int(h), int(j)
    return int(s[0]), int(s[1])


@dataclass(frozen=True)
class ScenarioSpec:
    """A fully specified data-generating process.

    Parameters
    ----------
    labels : list of str
    absorbing : list of int
    breaks : list of float
        Segment boundaries ``0 = b_0 < ... < b_K``; the last segment extends
        to infinity.
    intensities : dict
        ``(h, j) -> list of K base rates`` (one per segment).
    intensity_coefs : dict
        ``(h, j) -> {covariate: coefficient}``.
    transition_costs : dict
        ``(h, j) -> {"c0": .., "c1": .., "coefs": {covariate: δ}}``.
    cost_sigma : float
        Log-scale SD of the unit-mean lognormal cost factor.
    sojourn_rates : dict
        ``h -> list of K rates``.
    sojourn_sigma : float
        Log-scale SD of the unit-mean subject effect on sojourn rates.
    censoring : dict
        ``{"law": "none"}``, ``{"law": "uniform", "low": a, "high": b}``,
        ``{"law": "exponential", "rate": λ}`` or
        ``{"law": "atoms", "points": [...], "probs": [...]}`` (points may
        include ``inf``).
    covariates : list of dict
        ``{"name", "law": "bernoulli"|"normal"|"discrete", ...}``.
    initial : list of float
        Initial-state probabilities.
    r, tau : float
    grid : list of float
        Interval grid ``0 = a_0 < ... < a_G = tau``.
    n : int
    seed : int
    """

    labels: tuple
    absorbing: tuple
    breaks: tuple
    intensities: dict
    intensity_coefs: dict = field(default_factory=dict)
    transition_costs: dict = field(default_factory=dict)
    cost_sigma: float = 0.0
    sojourn_rates: dict = field(default_factory=dict)
    sojourn_sigma: float = 0.0
    censoring: dict = field(default_factory=lambda: {"law": "none"})
    covariates: tuple = ()
    initial: tuple = (1.0,)
    r: float = 0.0
    tau: float = 1.0
    grid: tuple = ()
    n: int = 100
    seed: int = 0

    def __post_init__(self):
        fix = object.__setattr__
        fix(self, "labels", tuple(self.labels))
        fix(self, "absorbing", tuple(int(a) for a in self.absorbing))
        fix(self, "breaks", tuple(float(b) for b in self.breaks))
        fix(self, "intensities", {_key(k): tuple(float(x) for x in v)
                                  for k, v in self.intensities.items()})
        fix(self, "intensity_coefs", {_key(k): dict(v) for k, v in self.intensity_coefs.items()})
        fix(self, "transition_costs", {_key(k): dict(v) for k, v in self.transition_costs.items()})
        fix(self, "sojourn_rates", {int(k): tuple(float(x) for x in v)
                                    for k, v in self.sojourn_rates.items()})
        fix(self, "covariates", tuple(dict(c) for c in self.covariates))
        m = len(self.labels)
        init = tuple(float(x) for x in self.initial)
        if len(init) < m:
            init = init + (0.0,) * (m - len(init))
        fix(self, "initial", init)
        grid = tuple(float(x) for x in self.grid) or (0.0, float(self.tau))
        fix(self, "grid", grid)
        self.validate()

    # ------------------------------------------------------------------
    def validate(self):
        try:
            ss = self.state_space
        except ValueError as exc:
            raise InvalidSpec(str(exc)) from None
        b = np.asarray(self.breaks)
        K = b.size
        if K == 0 or b[0] != 0 or np.any(np.diff(b) <= 0):
            raise InvalidSpec("breaks must start at 0 and increase strictly")
        for (h, j), v in self.intensities.items():
            if h == j or not (0 <= h < ss.n_states and 0 <= j < ss.n_states):
                raise InvalidSpec(f"invalid transition {h}->{j}")
            if ss.is_absorbing(h):
                raise InvalidSpec(f"transition {h}->{j} leaves an absorbing state")
            if len(v) != K or min(v) < 0:
                raise InvalidSpec(f"intensity {h}->{j} needs {K} nonnegative rates")
        for h, v in self.sojourn_rates.items():
            if len(v) != K or min(v) < 0:
                raise InvalidSpec(f"sojourn rates of state {h} need {K} nonnegative values")
        names = set(self.covariate_names)
        for d in list(self.intensity_coefs.values()) + [c.get("coefs", {}) for c in
                                                         self.transition_costs.values()]:
            if not set(d) <= names:
                raise InvalidSpec(f"unknown covariates {sorted(set(d) - names)}")
        for c in self.covariates:
            law = c.get("law")
            if law not in ("bernoulli", "normal", "discrete") or "name" not in c:
                raise InvalidSpec(f"invalid covariate law {c!r}")
        law = self.censoring.get("law")
        if law not in ("none", "uniform", "exponential", "atoms"):
            raise InvalidSpec(f"unknown censoring law {law!r}")
        if law == "uniform" and not (0 <= self.censoring["low"] < self.censoring["high"]):
            raise InvalidSpec("uniform censoring needs 0 <= low < high")
        if law == "exponential" and not self.censoring["rate"] > 0:
            raise InvalidSpec("exponential censoring needs a positive rate")
        if law == "atoms":
            p = np.asarray(self.censoring["probs"], dtype=float)
            pts = np.asarray(self.censoring["points"], dtype=float)
            if p.shape != pts.shape or np.any(p < 0) or abs(p.sum() - 1) > 1e-12 or np.any(pts <= 0):
                raise InvalidSpec("censoring atoms need positive points and probabilities summing to 1")
        init = np.asarray(self.initial)
        if init.size != ss.n_states or np.any(init < 0) or abs(init.sum() - 1) > 1e-12:
            raise InvalidSpec("initial probabilities must match the states and sum to 1")
        if np.any(init[list(self.absorbing)] > 0):
            raise InvalidSpec("subjects cannot start in an absorbing state")
        g = np.asarray(self.grid)
        if g[0] != 0 or np.any(np.diff(g) <= 0) or abs(g[-1] - self.tau) > 1e-12:
            raise InvalidSpec("grid must run from 0 to tau")
        if self.r < 0 or not self.tau > 0 or self.n < 1:
            raise InvalidSpec("need r >= 0, tau > 0 and n >= 1")
        if self.cost_sigma < 0 or self.sojourn_sigma < 0:
            raise InvalidSpec("noise scales must be nonnegative")

    @property
    def state_space(self):
        return StateSpace(list(self.labels), set(self.absorbing))

    @property
    def covariate_names(self):
        return [c["name"] for c in self.covariates]

    # ------------------------------------------------------------------
    def to_dict(self):
        return {
            "labels": list(self.labels), "absorbing": list(self.absorbing),
            "breaks": list(self.breaks),
            "intensities": {f"{h}->{j}": list(v) for (h, j), v in sorted(self.intensities.items())},
            "intensity_coefs": {f"{h}->{j}": v for (h, j), v in sorted(self.intensity_coefs.items())},
            "transition_costs": {f"{h}->{j}": v for (h, j), v in sorted(self.transition_costs.items())},
            "cost_sigma": self.cost_sigma,
            "sojourn_rates": {str(h): list(v) for h, v in sorted(self.sojourn_rates.items())},
            "sojourn_sigma": self.sojourn_sigma, "censoring": _jsonable(self.censoring),
            "covariates": list(self.covariates), "initial": list(self.initial),
            "r": self.r, "tau": self.tau, "grid": list(self.grid), "n": self.n, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        cens = dict(d.get("censoring", {"law": "none"}))
        if "points" in cens:
            cens["points"] = [float(x) for x in cens["points"]]
        d["censoring"] = cens
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidSpec(str(exc)) from None

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def replace(self, **changes):
        d = self.to_dict()
        d.update(changes)
        return ScenarioSpec.from_dict(d)

    # ------------------------------------------------------------------
    # true model quantities
    def segment(self, t):
        return np.searchsorted(np.asarray(self.breaks), t, side="right") - 1

    def linear_predictor(self, coefs, z):
        return sum(float(c) * float(z[name]) for name, c in coefs.items())

    def alpha(self, z):
        """Intensity functions ``t -> α_hj(t|z)`` at a fixed profile."""
        out = {}
        for (h, j), rates in self.intensities.items():
            mult = math.exp(self.linear_predictor(self.intensity_coefs.get((h, j), {}), z))
            out[(h, j)] = StepFunction(self.breaks[1:], np.asarray(rates[1:]) * mult,
                                       rates[0] * mult)
        return out

    def cost_mean(self, h, j, t, z):
        spec = self.transition_costs.get((h, j))
        if spec is None:
            return np.zeros_like(np.asarray(t, dtype=float))
        return (float(spec.get("c0", 0.0)) + float(spec.get("c1", 0.0)) * np.asarray(t, dtype=float)
                + self.linear_predictor(spec.get("coefs", {}), z))

    def sojourn_rate(self, h):
        rates = self.sojourn_rates.get(h)
        if rates is None:
            return StepFunction()
        return StepFunction(self.breaks[1:], rates[1:], rates[0])

    def censoring_survival(self, t):
        """``P(U > t)``."""
        c = self.censoring
        t = np.asarray(t, dtype=float)
        law = c["law"]
        if law == "none":
            return np.ones_like(t)
        if law == "uniform":
            return np.clip((c["high"] - t) / (c["high"] - c["low"]), 0.0, 1.0)
        if law == "exponential":
            return np.exp(-c["rate"] * np.maximum(t, 0))
        pts = np.asarray(c["points"], dtype=float)
        p = np.asarray(c["probs"], dtype=float)
        return np.array([p[pts > x].sum() for x in np.atleast_1d(t)]).reshape(t.shape)


def _jsonable(d):
    out = {}
    for k, v in d.items():
        if isinstance(v, (list, tuple)):
            out[k] = [None if isinstance(x, float) and math.isinf(x) else x for x in v]
        else:
            out[k] = v
    return out


# --------------------------------------------------------------------------
# random streams


class _UniformBuffer:
    """Per-subject uniform streams consumed in a fixed per-subject order."""

    def __init__(self, generators, width):
        self.gens = generators
        self.buf = np.vstack([g.random(width) for g in generators]) if generators else \
            np.empty((0, width))
        self.pos = np.zeros(len(generators), dtype=int)

    @classmethod
    def from_generator(cls, rng, n, width):
        obj = cls.__new__(cls)
        obj.gens = None
        obj.rng = rng
        obj.buf = rng.random((n, width))
        obj.pos = np.zeros(n, dtype=int)
        return obj

    def take(self, idx, k):
        idx = np.asarray(idx, dtype=int)
        need = self.pos[idx] + k
        if idx.size and need.max() > self.buf.shape[1]:
            self._grow(idx[need > self.buf.shape[1]], int(need.max()))
        cols = self.pos[idx][:, None] + np.arange(k)[None, :]
        out = self.buf[idx[:, None], cols]
        self.pos[idx] += k
        return out

    def _grow(self, rows, need):
        width = max(need, 2 * self.buf.shape[1])
        extra = np.full((self.buf.shape[0], width - self.buf.shape[1]), np.nan)
        self.buf = np.hstack((self.buf, extra))
        # only the subjects that ran out get fresh draws, from their own stream
        for i in np.unique(rows):
            fill = np.isnan(self.buf[i])
            src = self.gens[i] if self.gens is not None else self.rng
            self.buf[i, fill] = src.random(int(fill.sum()))
        others = np.isnan(self.buf)
        if others.any():
            for i in np.nonzero(others.any(axis=1))[0]:
                fill = others[i]
                src = self.gens[i] if self.gens is not None else self.rng
                self.buf[i, fill] = src.random(int(fill.sum()))


def subject_generators(seed, replicate, n):
    return [np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(replicate, i))))
            for i in range(n)]


# --------------------------------------------------------------------------
# simulation


class Cohort:
    """A simulated cohort as observed, plus the latent event and censoring times.

    ``costs`` holds the observed cost processes in columnar form; transition
    costs are lumps and sojourn costs are accrual pieces.
    """

    def __init__(self, spec, histories, costs, latent_event_times, censor_times, covariates):
        self.spec = spec
        self.histories = histories
        self.costs = costs
        self.latent_event_times = latent_event_times
        self.censor_times = censor_times
        self.covariates = covariates
        self._panels = None
        self._processes = None

    @property
    def event_times(self):
        """Observed absorption times (``inf`` when not observed)."""
        return np.array([h.absorption_time for h in self.histories])

    @property
    def n(self):
        return len(self.histories)

    @property
    def processes(self):
        if self._processes is None:
            self._processes = self.costs.processes()
        return self._processes

    @property
    def panels(self):
        """Undiscounted interval panels on the scenario grid (a :class:`PanelSet`)."""
        if self._panels is None:
            self._panels = build_panel_set(self.costs, self.event_times, self.censor_times,
                                        self.spec.grid, 0.0)
        return self._panels


def _draw_covariates(spec, u):
    out = {}
    for k, c in enumerate(spec.covariates):
        col = u[:, k]
        law = c["law"]
        if law == "bernoulli":
            out[c["name"]] = (col < float(c["p"])).astype(float)
        elif law == "normal":
            out[c["name"]] = float(c.get("mean", 0.0)) + float(c.get("sd", 1.0)) * ndtri(col)
        else:
            vals = np.asarray(c["values"], dtype=float)
            cp = np.cumsum(np.asarray(c["probs"], dtype=float))
            out[c["name"]] = vals[np.minimum(np.searchsorted(cp / cp[-1], col, side="right"),
                                             vals.size - 1)]
    return out


def _draw_censoring(spec, u):
    c = spec.censoring
    law = c["law"]
    if law == "none":
        return np.full(u.size, np.inf)
    if law == "uniform":
        return c["low"] + (c["high"] - c["low"]) * u
    if law == "exponential":
        return -np.log1p(-u) / c["rate"]
    pts = np.asarray(c["points"], dtype=float)
    cp = np.cumsum(np.asarray(c["probs"], dtype=float))
    return pts[np.minimum(np.searchsorted(cp / cp[-1], u, side="right"), pts.size - 1)]


def simulate_paths(spec, z, init, buffer):
    """Full latent paths up to ``tau`` by competing exponentials per segment.

    Returns per-subject lists of ``(time, from, to, cost)``.
    """
    n = init.size
    m = len(spec.labels)
    breaks = np.asarray(spec.breaks + (np.inf,))
    K = len(spec.breaks)
    types = sorted(spec.intensities)
    base = np.array([spec.intensities[t] for t in types]).reshape(len(types), K)
    lp = np.zeros((len(types), n))
    for k, t in enumerate(types):
        for name, c in spec.intensity_coefs.get(t, {}).items():
            lp[k] += float(c) * z[name]
    mult = np.exp(lp)
    from_state = np.array([t[0] for t in types], dtype=int)
    to_state = np.array([t[1] for t in types], dtype=int)
    absorbing = np.zeros(m, bool)
    absorbing[list(spec.absorbing)] = True
    paths = [[] for _ in range(n)]
    state = init.copy()
    time = np.zeros(n)
    active = ~absorbing[state]
    tau = spec.tau
    sigma = spec.cost_sigma
    while active.any():
        idx = np.nonzero(active)[0]
        u = buffer.take(idx, 3)
        seg = np.searchsorted(breaks, time[idx], side="right") - 1
        # rates of every type for the active subjects: (n_active, n_types)
        rates = base[:, seg].T * mult[:, idx].T
        rates = np.where(from_state[None, :] == state[idx][:, None], rates, 0.0)
        total = rates.sum(axis=1)
        with np.errstate(divide="ignore"):
            wait = np.where(total > 0, -np.log1p(-u[:, 0]) / np.where(total > 0, total, 1.0), np.inf)
        cand = time[idx] + wait
        seg_end = breaks[seg + 1]
        jump = (cand < seg_end) & (cand <= tau)
        # no jump: move to the next segment boundary (or stop at tau)
        stay = ~jump
        nxt = np.minimum(seg_end[stay], tau)
        time[idx[stay]] = nxt
        done = stay & (seg_end >= tau)
        active[idx[done]] = False
        if jump.any():
            ji = idx[jump]
            rj = rates[jump]
            cp = np.cumsum(rj, axis=1) / total[jump][:, None]
            # zero-rate types are never picked; the last live type absorbs round-off
            cp[rj == 0] = -np.inf
            last = rj.shape[1] - 1 - np.argmax((rj > 0)[:, ::-1], axis=1)
            cp[np.arange(rj.shape[0]), last] = np.inf
            pick = np.argmax(cp > u[jump, 1][:, None], axis=1)
            tj = cand[jump]
            frm, to = from_state[pick], to_state[pick]
            noise = np.exp(sigma * ndtri(u[jump, 2]) - 0.5 * sigma ** 2) if sigma > 0 else \
                np.ones(ji.size)
            for k, i in enumerate(ji):
                h, j = int(frm[k]), int(to[k])
                mean = float(spec.cost_mean(h, j, tj[k], {nm: z[nm][i] for nm in z}))
                if mean < 0:
                    raise InvalidSpec(f"negative mean cost for {h}->{j} at t={tj[k]}")
                paths[i].append((float(tj[k]), h, j, mean * float(noise[k])))
            state[ji] = to
            time[ji] = tj
            active[ji] = ~absorbing[to]
    return paths


def _sojourn_pieces(spec, path, init, end, effect):
    """Constant-rate accrual pieces of one path up to ``end``."""
    starts, ends, rates = [], [], []
    bounds = list(spec.breaks) + [math.inf]
    state, t0 = init, 0.0
    for t1, nxt in [(e[0], e[2]) for e in path] + [(math.inf, None)]:
        a, b = t0, min(t1, end)
        rs = spec.sojourn_rates.get(state)
        if b > a and rs is not None:
            for k, rate in enumerate(rs):
                lo, hi = max(a, bounds[k]), min(b, bounds[k + 1])
                if hi > lo and rate > 0:
                    starts.append(lo)
                    ends.append(hi)
                    rates.append(rate * effect)
        if t1 >= end or nxt is None:
            break
        state, t0 = nxt, t1
    return starts, ends, rates


def simulate_cohort(spec, replicate=0, n=None, rng=None):
    """Simulate one observed cohort.

    Parameters
    ----------
    spec : ScenarioSpec
    replicate : int
        Replicate index; subject ``i`` uses the stream
        ``SeedSequence(spec.seed, spawn_key=(replicate, i))``.
    n : int, optional
        Overrides ``spec.n``.
    rng : numpy.random.Generator, optional
        Draw everything from this single generator instead of per-subject
        streams (faster for very large oracle cohorts).

    Returns
    -------
    Cohort
    """
    n = spec.n if n is None else int(n)
    nz = len(spec.covariates)
    width = nz + 3 + 24
    if rng is None:
        buffer = _UniformBuffer(subject_generators(spec.seed, replicate, n), width)
    else:
        buffer = _UniformBuffer.from_generator(rng, n, width)
    head = buffer.take(np.arange(n), nz + 3)
    z = _draw_covariates(spec, head[:, :nz])
    cp = np.cumsum(spec.initial)
    init = np.minimum(np.searchsorted(cp / cp[-1], head[:, nz], side="right"),
                      len(spec.labels) - 1).astype(int)
    U = _draw_censoring(spec, head[:, nz + 1])
    sg = spec.sojourn_sigma
    effect = np.exp(sg * ndtri(head[:, nz + 2]) - 0.5 * sg ** 2) if sg > 0 else np.ones(n)
    paths = simulate_paths(spec, z, init, buffer)
    ss = spec.state_space
    tau = spec.tau
    histories = []
    latent_T = np.full(n, np.inf)
    ls, lt, lc, ps, pa, pb, pr = [], [], [], [], [], [], []
    for i in range(n):
        path = paths[i]
        if path and ss.is_absorbing(path[-1][2]):
            latent_T[i] = path[-1][0]
        limit = min(U[i], tau)
        obs = [e for e in path if e[0] <= limit]
        cov = {name: float(z[name][i]) for name in z}
        events = tuple(TransitionEvent(t, h, j, c) for (t, h, j, c) in obs)
        histories.append(EventHistory(i, int(init[i]), events, float(U[i]), tau, ss, cov))
        for (t, _, _, c) in obs:
            ls.append(i)
            lt.append(t)
            lc.append(c)
        s, e, r = _sojourn_pieces(spec, path, int(init[i]), min(limit, latent_T[i]),
                                  float(effect[i]))
        ps.extend([i] * len(s))
        pa.extend(s)
        pb.extend(e)
        pr.extend(r)
    costs = CostTable(n, ls, lt, lc, ps, pa, pb, pr)
    return Cohort(spec, histories, costs, latent_T, U, z)


# --------------------------------------------------------------------------
# oracles


def _profile_terms(spec, z, r):
    """Per-state integrand ``g_h(t) = b_h(t) E[a] + Σ_j c_hj(t|z) α_hj(t|z)``."""
    alpha = spec.alpha(z)

    def g(t):
        m = len(spec.labels)
        out = np.zeros(m)
        for h in range(m):
            out[h] = float(spec.sojourn_rate(h)(t))
        for (h, j), a in alpha.items():
            out[h] += float(spec.cost_mean(h, j, t, z)) * float(a(t))
        return out * math.exp(-r * t)
    return alpha, g


def _expected_cost_path(spec, z, r, t_end, extra_knots=(), tol_p=1e-8, tol_v=1e-7,
                        initial_steps=8, max_halvings=14):
    """Nodes, P(0, t|z) and the cumulative expected discounted cost by initial state.

    Simpson's rule on each knot interval, with the RK4 product integral
    evaluated on the same nodes, is refined until ``P`` changes by less than
    ``tol_p`` and the total by less than ``tol_v`` (relative).
    """
    alpha, g = _profile_terms(spec, z, r)
    m = len(spec.labels)
    knots = np.unique(np.concatenate(([0.0], [b for b in spec.breaks if 0 < b < t_end],
                                      [x for x in extra_knots if 0 < x < t_end], [t_end])))
    steps = initial_steps
    prev_p, prev_total = None, None
    for _ in range(max_halvings):
        nodes, mats = propagate(alpha, m, knots, steps)
        # integrand at nodes, using the value from inside each knot interval
        gv = np.empty((nodes.size, m))
        seg_of = np.repeat(np.arange(knots.size - 1), steps)
        gv[0] = g(0.0)
        for k in range(1, nodes.size):
            a = knots[seg_of[k - 1]]
            gv[k] = g(np.nextafter(nodes[k], a)) if nodes[k] in knots else g(nodes[k])
        # right-limit values at knot starts
        f = np.einsum("kih,kh->ki", mats, gv)
        fr = f.copy()
        for s in range(knots.size - 1):
            i0 = s * steps
            fr[i0] = mats[i0] @ g(knots[s])
        cum = np.zeros((nodes.size, m))
        h = np.diff(nodes)
        for s in range(knots.size - 1):
            i0 = s * steps
            for k in range(0, steps, 2):
                a = i0 + k
                left = fr[a] if k == 0 else f[a]
                hh = h[a]
                cum[a + 2] = cum[a] + hh / 3 * (left + 4 * f[a + 1] + f[a + 2])
                # midpoint value by Simpson on the half interval via interpolation
                cum[a + 1] = cum[a] + hh / 12 * (5 * left + 8 * f[a + 1] - f[a + 2])
        total = cum[-1]
        if prev_p is not None:
            dp = np.max(np.abs(mats[::2] - prev_p))
            dv = np.max(np.abs(total - prev_total) / np.maximum(np.abs(total), 1e-300))
            if dp < tol_p and (dv < tol_v or np.all(np.abs(total - prev_total) < 1e-14)):
                return nodes, mats, cum
        prev_p, prev_total = mats, total
        steps *= 2
    raise NoConvergence("oracle quadrature did not converge", steps=steps)


def oracle_npv(spec, z=None, initial=None, r=None, tau=None):
    """True NPV at covariate profile ``z`` from initial state ``initial``.

    With ``initial=None`` the initial distribution of the scenario is used.
    """
    z = dict(z or {})
    r = spec.r if r is None else r
    tau = spec.tau if tau is None else tau
    _, _, cum = _expected_cost_path(spec, z, r, tau)
    total = cum[-1]
    if initial is None:
        return float(np.dot(spec.initial, total))
    return float(total[initial])


def covariate_nodes(spec, n_hermite=20):
    """Quadrature nodes and weights for the joint covariate law."""
    nodes = [({}, 1.0)]
    for c in spec.covariates:
        law = c["law"]
        if law == "bernoulli":
            p = float(c["p"])
            pts = [(0.0, 1 - p), (1.0, p)]
        elif law == "discrete":
            pr = np.asarray(c["probs"], dtype=float)
            pts = list(zip(map(float, c["values"]), pr / pr.sum()))
        else:
            x, w = np.polynomial.hermite_e.hermegauss(n_hermite)
            w = w / w.sum()
            pts = [(float(c.get("mean", 0.0)) + float(c.get("sd", 1.0)) * xi, float(wi))
                   for xi, wi in zip(x, w)]
        nodes = [({**d, c["name"]: v}, pw * w) for d, pw in nodes for v, w in pts]
    return nodes


def oracle_npv_marginal(spec, r=None, tau=None, n_hermite=20):
    """True NPV averaged over the covariate law and the initial distribution."""
    return float(sum(w * oracle_npv(spec, z, None, r, tau)
                     for z, w in covariate_nodes(spec, n_hermite)))


def oracle_survival(spec, z, t, initial=None):
    """``P(T > t | z)`` for absorption time ``T``."""
    alpha = spec.alpha(dict(z or {}))
    m = len(spec.labels)
    knots = np.unique(np.concatenate(([0.0], [b for b in spec.breaks if 0 < b < t], [t])))
    nodes, mats = propagate(alpha, m, knots, 256)
    trans = [h for h in range(m) if h not in spec.absorbing]
    p = mats[-1][:, trans].sum(axis=1)
    return float(np.dot(spec.initial, p)) if initial is None else float(p[initial])


@dataclass(frozen=True)
class LinBias:
    """Bias term of the grid estimator with its Monte Carlo standard error
    (0 when computed by quadrature)."""

    value: float
    se: float
    expected_total: float

    @property
    def limit(self):
        """``E V(tau) - E*``."""
        return self.expected_total - self.value


def _mean_cost_function(spec, extra_knots=(), n_hermite=20):
    """Undiscounted ``M(t) = E V(t)`` on the union of the quadrature grids."""
    pieces = []
    for z, w in covariate_nodes(spec, n_hermite):
        nodes, _, cum = _expected_cost_path(spec, z, 0.0, spec.tau, extra_knots)
        pieces.append((nodes, w * (cum @ np.asarray(spec.initial))))
    nodes = pieces[0][0]
    if all(p[0].shape == nodes.shape and np.all(p[0] == nodes) for p in pieces):
        return nodes, sum(p[1] for p in pieces)
    grid = np.unique(np.concatenate([p[0] for p in pieces]))
    return grid, sum(np.interp(grid, p[0], p[1]) for p in pieces)


def oracle_lin_bias(spec, n_hermite=20):
    """``E* = Σ_g ∫_(a_{g-1}, a_g) (M(a_g) - M(u)) dF_U(u) / P(U > a_{g-1})``.

    ``M(t)`` is the expected undiscounted cost accrued by ``t``.  Censoring
    exactly at a grid point leaves the interval fully observed, so atoms on
    the grid contribute nothing.  Computed by quadrature.
    """
    c = spec.censoring
    grid = np.asarray(spec.grid)
    law = c["law"]
    atoms = np.asarray(c.get("points", []), dtype=float) if law == "atoms" else np.empty(0)
    extra = list(grid[1:-1]) + [a for a in atoms if np.isfinite(a)]
    if law == "uniform":
        extra += [c["low"], c["high"]]
    nodes, M = _mean_cost_function(spec, extra, n_hermite)
    expected_total = float(M[-1])
    if law == "none":
        return LinBias(0.0, 0.0, expected_total)

    def M_at(t):
        return np.interp(t, nodes, M)

    total = 0.0
    for g in range(1, grid.size):
        lo, hi = grid[g - 1], grid[g]
        surv = float(spec.censoring_survival(lo))
        if surv <= 0:
            continue
        if law == "atoms":
            p = np.asarray(c["probs"], dtype=float)
            inside = (atoms > lo) & (atoms < hi)
            val = float(np.sum((M_at(hi) - M_at(atoms[inside])) * p[inside]))
        else:
            m = (nodes >= lo) & (nodes <= hi)
            x = nodes[m]
            if law == "uniform":
                inside = (x >= c["low"]) & (x <= c["high"])
                dens = np.where(inside, 1.0 / (c["high"] - c["low"]), 0.0)
            else:
                dens = c["rate"] * np.exp(-c["rate"] * x)
            y = (M_at(hi) - M[m]) * dens
            val = _simpson_nodes(x, y) if law == "exponential" else _piecewise_simpson(x, y, c)
        total += val / surv
    return LinBias(float(total), 0.0, expected_total)


def _simpson_nodes(x, y):
    from scipy.integrate import simpson, trapezoid
    return float(simpson(y, x=x)) if x.size > 2 else float(trapezoid(y, x)) if x.size == 2 else 0.0


def _piecewise_simpson(x, y, c):
    """Integrate a uniform-density integrand, splitting at the support ends."""
    total = 0.0
    inside = (x >= c["low"]) & (x <= c["high"])
    if inside.sum() >= 2:
        total = _simpson_nodes(x[inside], y[inside])
    return total


def oracle_lin_bias_mc(spec, n_draws=200_000, seed=None, batch=50_000):
    """Monte Carlo version of :func:`oracle_lin_bias` from uncensored paths.

    Each latent path is paired with an independent censoring draw; the
    contribution is ``(V(a_g) - V(U)) [a_{g-1} < U < min(T, a_g)] / P(U > a_{g-1})``.
    """
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    uncensored = spec.replace(censoring={"law": "none"})
    grid = np.asarray(spec.grid)
    vals, totals = [], []
    done = 0
    while done < n_draws:
        k = min(batch, n_draws - done)
        cohort = simulate_cohort(uncensored, n=k, rng=rng)
        u = _draw_censoring(spec, rng.random(k))
        grid_idx = np.searchsorted(grid, u, side="left")
        T = cohort.latent_event_times
        totals.append(cohort.costs.accumulated(spec.tau))
        g = np.clip(grid_idx, 1, grid.size - 1)
        hit = ((grid_idx >= 1) & (grid_idx < grid.size) & (u > grid[g - 1])
               & (u < np.minimum(T, grid[g])))
        lost = cohort.costs.accumulated(grid[g]) - cohort.costs.accumulated(np.minimum(u, grid[g]))
        vals.append(np.where(hit, lost / spec.censoring_survival(grid[g - 1]), 0.0))
        done += k
    vals = np.concatenate(vals)
    return LinBias(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size)),
                   float(np.mean(np.concatenate(totals))))
