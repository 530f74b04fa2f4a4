"""Net present value, QALY and discounted life expectancy from fitted models.

For a subject starting in state ``i`` with covariates ``z``::

    NPV(z, i) = Σ_{h≠j} ∫ e^{-rt} c_hj(t|z) P_ih(0, t-|z) dA_hj(t|z)
              + Σ_h ∫ e^{-rt} b_h(t|z) P_ih(0, t-|z) dt

and the unconditional value mixes over the initial distribution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, InvariantViolation, MissingCostModel, NoJumps
from .stepfn import StepFunction, discounted_lebesgue_integral


@dataclass(frozen=True)
class CovariateProfile:
    """Fixed covariate values plus a label for reporting."""

    z: dict = field(default_factory=dict)
    label: str = "profile"

    def row(self, recipe, h, j, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        cov = {}
        for name in recipe.covariates_used():
            if name not in self.z:
                raise DimensionMismatch(f"profile lacks covariate {name!r}")
            cov[name] = np.full(t.size, float(self.z[name]))
        return recipe.matrix(h, j, cov, t)


@dataclass(frozen=True)
class InitialDistribution:
    """Probabilities of the initial states."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float).reshape(-1)
        if np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
            raise InvariantViolation("initial probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "probs", p)

    @classmethod
    def point(cls, i, n_states):
        p = np.zeros(n_states)
        p[i] = 1.0
        return cls(p)


def empirical_initial_distribution(histories, strata=None, level=None):
    """Observed initial-state frequencies, optionally within one stratum."""
    if strata is not None:
        histories = [h for h in histories if h.covariate(strata) == level]
    if not histories:
        raise InvariantViolation("no subjects for the initial distribution")
    m = histories[0].state_space.n_states
    counts = np.bincount([h.initial_state for h in histories], minlength=m)
    return InitialDistribution(counts / counts.sum())


@dataclass(frozen=True)
class QualityWeights:
    """State utilities ``q(h, t)``; floats or step functions of time in [0, 1]."""

    q: dict

    def function(self, h, state_space):
        if state_space.is_absorbing(h):
            return StepFunction.constant(0.0)
        v = self.q.get(h, 0.0)
        f = v if isinstance(v, StepFunction) else StepFunction.constant(float(v))
        vals = np.concatenate(([f.initial_value], f.values))
        if np.any(vals < 0) or np.any(vals > 1):
            raise InvariantViolation(f"quality weight of state {h} outside [0, 1]")
        return f


@dataclass(frozen=True)
class PiecewiseRates:
    """Sojourn cost rates ``b_h`` constant on the grid intervals ``(a_{k-1}, a_k]``.

    ``rates[h, k]`` is the rate of state ``h`` on interval ``k``.
    """

    grid: np.ndarray
    rates: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        rates = np.atleast_2d(np.asarray(self.rates, dtype=float))
        if rates.shape[1] != grid.size - 1:
            raise DimensionMismatch("one rate per grid interval is required")
        if np.any(~np.isfinite(rates)) or np.any(rates < 0):
            raise InvariantViolation("sojourn rates must be finite and nonnegative")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "rates", rates)

    def function(self, h):
        if h >= self.rates.shape[0]:
            return StepFunction()
        vals = np.concatenate((self.rates[h], [0.0]))
        return StepFunction(self.grid, vals, 0.0) if self.grid[0] > 0 else \
            StepFunction(self.grid[1:], vals[1:], vals[0])

    @classmethod
    def from_occupancy_fit(cls, fit, grid, states, n_states, clip=True):
        """Rates from the coefficients of an occupancy regression."""
        G = len(grid) - 1
        beta = np.asarray(fit.beta, dtype=float)
        if beta.size != len(states) * G:
            raise DimensionMismatch("coefficient length does not match states × intervals")
        rates = np.zeros((n_states, G))
        for k, h in enumerate(states):
            rates[h] = beta[k * G:(k + 1) * G]
        if clip:
            rates = np.clip(rates, 0, None)
        return cls(grid, rates)

    @classmethod
    def from_log_rate_fit(cls, fit, recipe, profile, grid, states, n_states):
        """Naive back-transform ``exp(x'β)`` at interval midpoints.

        Under lognormal errors this underestimates the mean rate by the
        factor ``exp(-σ²/2)``; no smearing correction is applied.
        """
        grid = np.asarray(grid, dtype=float)
        mid = 0.5 * (grid[:-1] + grid[1:])
        rates = np.zeros((n_states, mid.size))
        for h in states:
            rates[h] = np.exp(profile.row(recipe, h, h, mid) @ fit.beta)
        return cls(grid, rates)


@dataclass(frozen=True)
class TransitionCostModel:
    """Mean transition cost ``c_hj(t|z) = x_hj(t)'β`` from a regression fit."""

    fit: object
    recipe: object
    types: frozenset

    def mean(self, profile, h, j, t):
        if (h, j) not in self.types:
            raise MissingCostModel(f"no cost model for transition {h}->{j}", transition=(h, j))
        return predict_mean_cost(profile, self.fit, self.recipe, (h, j), t)


def predict_mean_cost(profile, fit, recipe, transition, t):
    """``x_hj(t)'β̂`` (exponentiated for log-link fits)."""
    h, j = transition
    X = profile.row(recipe, h, j, t)
    beta = np.asarray(fit.beta, dtype=float)
    if X.shape[1] != beta.size:
        raise DimensionMismatch(f"design has {X.shape[1]} columns, β has {beta.size}")
    eta = X @ beta
    out = np.exp(eta) if getattr(fit, "link", "identity") == "log" else eta
    return float(out[0]) if np.ndim(t) == 0 else out


def _cost_at(costs, profile, h, j, t):
    if costs is None:
        return np.zeros(t.size)
    if isinstance(costs, TransitionCostModel):
        return np.asarray(costs.mean(profile, h, j, t), dtype=float)
    if (h, j) not in costs:
        raise MissingCostModel(f"no cost model for transition {h}->{j}", transition=(h, j))
    c = costs[(h, j)]
    return np.asarray(c(t), dtype=float) * np.ones(t.size) if callable(c) else np.full(t.size, float(c))


@dataclass(frozen=True)
class NpvReport:
    """NPV by initial state with its transition and sojourn streams."""

    profile: str
    r: float
    tau: float
    by_state: dict
    initial: np.ndarray
    qaly: float | None = None
    life_expectancy: float | None = None

    @property
    def transition(self):
        return float(sum(p * self.by_state[i]["transition"] for i, p in enumerate(self.initial)
                         if p > 0))

    @property
    def sojourn(self):
        return float(sum(p * self.by_state[i]["sojourn"] for i, p in enumerate(self.initial)
                         if p > 0))

    @property
    def total(self):
        return self.transition + self.sojourn

    def to_dict(self):
        return {"profile": self.profile, "r": self.r, "tau": self.tau,
                "by_state": {str(k): v for k, v in self.by_state.items()},
                "initial": self.initial.tolist(),
                "unconditional": {"transition": self.transition, "sojourn": self.sojourn,
                                  "total": self.total},
                "qaly": self.qaly, "life_expectancy": self.life_expectancy}

    def rows(self):
        """Flat records: one per initial state and stream."""
        out = []
        for i, v in self.by_state.items():
            for stream in ("transition", "sojourn", "total"):
                out.append({"profile": self.profile, "initial_state": i, "stream": stream,
                            "value": v[stream]})
        for stream in ("transition", "sojourn", "total"):
            out.append({"profile": self.profile, "initial_state": "all", "stream": stream,
                        "value": getattr(self, stream)})
        return out


def transition_stream(cim, path, i, costs, profile, r, tau):
    """``Σ_{h≠j} Σ_t e^{-rt} c_hj(t) P_ih(0,t-) ΔA_hj(t)`` over jumps in (0, tau]."""
    total = 0.0
    for (h, j), a in cim.a_hj.items():
        jt = a.jump_times
        m = (jt > 0) & (jt <= tau)
        da = a.jumps[m]
        if not np.any(da != 0):
            continue
        t = jt[m]
        c = _cost_at(costs, profile, h, j, t)
        p = path.before(t)[:, i, h]
        total += float(np.sum(np.exp(-r * t) * c * p * da))
    return total


def sojourn_stream(path, i, rates, r, tau, n_states):
    """``Σ_h ∫_(0,tau] e^{-rt} b_h(t) P_ih(0,t-) dt``, exact for step integrands."""
    if rates is None:
        return 0.0
    total = 0.0
    for h in range(n_states):
        b = rates.function(h)
        if not np.any(np.concatenate(([b.initial_value], b.values)) != 0):
            continue
        total += discounted_lebesgue_integral(path.entry(i, h) * b, r, tau)
    return total


def npv_profile(cim, path, initial, r, tau, costs=None, rates=None, profile=None):
    """Plug-in NPV for one covariate profile.

    Parameters
    ----------
    cim : CumulativeIntensityMatrix
        ``Â(·|z)`` whose atoms carry the transition stream.
    path : TransitionMatrixPath
        ``P̂(0, ·|z)``.
    initial : int or InitialDistribution
    costs : TransitionCostModel, dict or None
        Mean transition costs.  A dict maps ``(h, j)`` to a constant or a
        vectorised function of time.  ``None`` means no transition costs.
    rates : PiecewiseRates or None
        Sojourn cost rates.
    profile : CovariateProfile, optional

    Returns
    -------
    NpvReport
    """
    if r < 0:
        raise ValueError("discount rate must be nonnegative")
    m = cim.n_states
    profile = profile or CovariateProfile()
    if isinstance(initial, (int, np.integer)):
        initial = InitialDistribution.point(int(initial), m)
    if initial.probs.size != m:
        raise DimensionMismatch("initial distribution does not match the state space")
    by_state = {}
    for i in np.nonzero(initial.probs > 0)[0]:
        tr = transition_stream(cim, path, int(i), costs, profile, r, tau)
        so = sojourn_stream(path, int(i), rates, r, tau, m)
        by_state[int(i)] = {"transition": tr, "sojourn": so, "total": tr + so}
    return NpvReport(profile.label, float(r), float(tau), by_state, initial.probs)


def npv_single_transition_cov(survival, beta, design, r, tau):
    """``β'Σ_t e^{-rt} x_0(t) (-ΔŜ(t))`` over jumps of ``Ŝ`` in (0, tau].

    ``survival`` is a StepFunction (or anything with a ``survival``
    attribute) and ``design(t)`` returns the rows ``x_0(t)`` for an array of
    times.
    """
    s = getattr(survival, "survival", survival)
    jt = s.jump_times
    m = (jt > 0) & (jt <= tau)
    dF = -s.jumps[m]
    if not np.any(dF != 0):
        raise NoJumps("the survival curve has no jumps in (0, tau]")
    t = jt[m]
    X = np.atleast_2d(np.asarray(design(t), dtype=float))
    beta = np.asarray(beta, dtype=float)
    if X.shape != (t.size, beta.size):
        raise DimensionMismatch(f"design rows have shape {X.shape}, expected ({t.size}, {beta.size})")
    return float(np.sum(np.exp(-r * t) * dF * (X @ beta)))


def discounted_life_expectancy(survival, r, t):
    """``∫_(0,t] e^{-ru} S(u) du``."""
    s = getattr(survival, "survival", survival)
    return discounted_lebesgue_integral(s, r, t)


def piecewise_sojourn_npv(survival, grid, rates, r):
    """``Σ_k b_k [LE(a_k) - LE(a_{k-1})]`` for rates constant on grid intervals."""
    grid = np.asarray(grid, dtype=float)
    rates = np.asarray(rates, dtype=float)
    le = np.array([discounted_life_expectancy(survival, r, a) if a > 0 else 0.0 for a in grid])
    return float(np.sum(rates * np.diff(le)))


def qaly(weights, path, initial, r, tau, state_space):
    """``Σ_i π_i Σ_h ∫ e^{-rt} q(h,t) P_ih(0,t-) dt`` over (0, tau]."""
    m = state_space.n_states
    if isinstance(initial, (int, np.integer)):
        initial = InitialDistribution.point(int(initial), m)
    total = 0.0
    for i in np.nonzero(initial.probs > 0)[0]:
        acc = 0.0
        for h in range(m):
            q = weights.function(h, state_space)
            if q.initial_value == 0 and not np.any(q.values != 0):
                continue
            acc += discounted_lebesgue_integral(path.entry(int(i), h) * q, r, tau)
        total += initial.probs[i] * acc
    return float(total)
