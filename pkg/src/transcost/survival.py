"""Product-limit estimation of event-time and censoring distributions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptySample, EmptyStratum
from .stepfn import StepFunction


@dataclass(frozen=True)
class SurvivalFit:
    """A product-limit curve together with its risk-set counts.

    ``at_risk`` is the right-continuous companion #{X_i > t}; the risk set
    size at ``t`` is ``at_risk.left(t)`` (see :meth:`n_at_risk`).
    """

    survival: StepFunction
    at_risk: StepFunction
    n: int
    event_times: np.ndarray
    n_events: np.ndarray
    strata_key: object = None

    def __call__(self, t):
        return self.survival(t)

    def left(self, t):
        return self.survival.left(t)

    def n_at_risk(self, t):
        return self.at_risk.left(t)


def kaplan_meier(times, event_flags, strata_key=None):
    """Product-limit estimator.

    At tied times events are taken to precede censorings, so a subject
    censored at ``t`` is still in the risk set for events at ``t``.

    Examples
    --------
    >>> fit = kaplan_meier([1, 2, 3], [True, False, True])
    >>> float(fit(1)), float(fit(3))
    (0.6666666666666666, 0.0)
    """
    times = np.asarray(times, dtype=float).reshape(-1)
    flags = np.asarray(event_flags, dtype=bool).reshape(-1)
    if times.size == 0:
        raise EmptySample("kaplan_meier needs at least one observation")
    if times.shape != flags.shape:
        raise ValueError("times and event_flags must have the same length")
    if np.any(times < 0) or np.any(np.isnan(times)):
        raise ValueError("times must be nonnegative")
    n = times.size
    uniq, inverse = np.unique(times, return_inverse=True)
    n_at = np.bincount(inverse, minlength=uniq.size)
    d_at = np.bincount(inverse, weights=flags.astype(float), minlength=uniq.size)
    # risk set at uniq[k] = n - (number of observations strictly before it)
    risk = n - np.concatenate(([0], np.cumsum(n_at)[:-1]))
    ev = (d_at > 0) & np.isfinite(uniq)
    et, d, y = uniq[ev], d_at[ev], risk[ev]
    surv = np.cumprod(1.0 - d / y)
    finite = np.isfinite(uniq)
    at_risk = StepFunction(uniq[finite], (n - np.cumsum(n_at))[finite], float(n))
    return SurvivalFit(StepFunction(et, surv, 1.0), at_risk, n, et, d.astype(int), strata_key)


def observed_times(histories):
    """Per-subject ``(min(T, U, τ), absorbed-and-observed, censored-before-end)``."""
    x = np.array([h.end_of_observation for h in histories], dtype=float)
    event = np.array([h.absorption_time <= min(h.censor_time, h.horizon) for h in histories])
    cens = np.array([h.is_censored for h in histories])
    return x, event, cens


def survival_fit(histories):
    """Product-limit estimate of the time to absorption."""
    x, event, _ = observed_times(histories)
    return kaplan_meier(x, event)


def censoring_survival(histories, strata=None, levels=None):
    """Product-limit estimate of the censoring distribution G, optionally
    stratified on a discrete covariate.

    Each subject contributes ``min(T, U, τ)`` with the censoring indicator
    as the "event".  Returns a mapping from stratum value (``None`` when
    unstratified) to :class:`SurvivalFit`.
    """
    if not histories:
        raise EmptySample("no histories supplied")
    x, _, cens = observed_times(histories)
    if strata is None:
        return {None: kaplan_meier(x, cens)}
    keys = np.array([h.covariate(strata) for h in histories])
    wanted = list(levels) if levels is not None else sorted(set(keys.tolist()))
    out = {}
    for k in wanted:
        m = keys == k
        if not m.any():
            raise EmptyStratum(f"stratum {strata}={k!r} has no subjects", stratum=k)
        out[k] = kaplan_meier(x[m], cens[m], strata_key=k)
    return out


def censoring_km(event_times, censor_times, horizon=np.inf):
    """Censoring product-limit estimate from raw ``(T_i, U_i)`` pairs.

    A subject is censored when ``U_i < min(T_i, horizon)``; events at the
    same instant as censoring are treated as observed.
    """
    t = np.asarray(event_times, dtype=float)
    u = np.asarray(censor_times, dtype=float)
    x = np.minimum(np.minimum(t, u), horizon)
    return kaplan_meier(x, u < np.minimum(t, horizon))
