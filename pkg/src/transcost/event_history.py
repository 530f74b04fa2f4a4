"""Multi-state event histories under right censoring, and their aggregation
into counting and at-risk processes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import (BrokenChain, EventAfterCensoring, InvariantViolation,
                     MixedStateSpaces, NonMonotoneTimes, TransitionFromAbsorbing)
from .stepfn import StepFunction


@dataclass(frozen=True)
class StateSpace:
    labels: tuple
    absorbing: frozenset

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "absorbing", frozenset(int(a) for a in self.absorbing))
        if not self.absorbing:
            raise InvariantViolation("at least one absorbing state is required")
        if not all(0 <= a < len(self.labels) for a in self.absorbing):
            raise InvariantViolation("absorbing state index out of range")
        if len(self.absorbing) == len(self.labels):
            raise InvariantViolation("at least one transient state is required")

    @property
    def n_states(self):
        return len(self.labels)

    @property
    def transient(self):
        return frozenset(range(self.n_states)) - self.absorbing

    def is_absorbing(self, h):
        return h in self.absorbing

    def check_index(self, h):
        if not (isinstance(h, (int, np.integer)) and 0 <= h < self.n_states):
            raise InvariantViolation(f"state index {h!r} is not in 0..{self.n_states - 1}")
        return int(h)

    @classmethod
    def illness_death(cls):
        return cls(("healthy", "ill", "dead"), frozenset({2}))

    @classmethod
    def two_state(cls):
        return cls(("alive", "dead"), frozenset({1}))


@dataclass(frozen=True)
class TransitionEvent:
    time: float
    from_state: int
    to_state: int
    cost: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.time) and self.time >= 0):
            raise InvariantViolation(f"event time must be finite and nonnegative, got {self.time}")
        if self.from_state == self.to_state:
            raise InvariantViolation("from_state and to_state must differ")
        if not (self.cost >= 0 and math.isfinite(self.cost)):
            raise InvariantViolation(f"transition cost must be finite and nonnegative, got {self.cost}")


@dataclass(frozen=True)
class EventHistory:
    """One subject's observed path.

    ``censor_time`` is ``inf`` for subjects that are never censored.
    Covariates map names to floats, or to :class:`StepFunction` for
    time-varying values.
    """

    subject_id: object
    initial_state: int
    events: tuple
    censor_time: float
    horizon: float
    state_space: StateSpace
    covariates: Mapping = field(default_factory=dict)

    def __post_init__(self):
        ss = self.state_space
        object.__setattr__(self, "events", tuple(self.events))
        object.__setattr__(self, "covariates", dict(self.covariates))
        object.__setattr__(self, "censor_time", float(self.censor_time))
        ss.check_index(self.initial_state)
        if not self.horizon > 0 or not math.isfinite(self.horizon):
            raise InvariantViolation("horizon must be positive and finite")
        if not self.censor_time > 0:
            raise InvariantViolation("censor_time must be positive")
        limit = min(self.censor_time, self.horizon)
        state = self.initial_state
        prev = -math.inf
        for ev in self.events:
            ss.check_index(ev.from_state)
            ss.check_index(ev.to_state)
            if ev.time <= prev:
                raise NonMonotoneTimes(
                    f"subject {self.subject_id}: event time {ev.time} does not follow {prev}",
                    subject_id=self.subject_id)
            if ss.is_absorbing(state):
                raise TransitionFromAbsorbing(
                    f"subject {self.subject_id}: transition at {ev.time} after absorption in {state}",
                    subject_id=self.subject_id)
            if ev.from_state != state:
                raise BrokenChain(
                    f"subject {self.subject_id}: event at {ev.time} leaves {ev.from_state}, "
                    f"but the subject is in {state}", subject_id=self.subject_id)
            if ev.time > limit:
                raise EventAfterCensoring(
                    f"subject {self.subject_id}: event at {ev.time} after "
                    f"min(censor_time, horizon) = {limit}", subject_id=self.subject_id)
            state = ev.to_state
            prev = ev.time

    # derived quantities ---------------------------------------------------
    @property
    def final_state(self):
        return self.events[-1].to_state if self.events else self.initial_state

    @property
    def absorbed(self):
        return self.state_space.is_absorbing(self.final_state)

    @property
    def absorption_time(self):
        """Time of entry into an absorbing state, ``inf`` if not observed."""
        return self.events[-1].time if self.absorbed else math.inf

    @property
    def end_of_observation(self):
        return min(self.censor_time, self.horizon, self.absorption_time)

    @property
    def is_censored(self):
        """True when censoring stops observation before absorption and the horizon."""
        return self.censor_time < min(self.horizon, self.absorption_time)

    def state_at(self, t):
        """X(t) for ``t`` within the observation window."""
        state = self.initial_state
        for ev in self.events:
            if ev.time <= t:
                state = ev.to_state
            else:
                break
        return state

    def state_before(self, t):
        """X(t-)."""
        state = self.initial_state
        for ev in self.events:
            if ev.time < t:
                state = ev.to_state
            else:
                break
        return state

    def covariate(self, name, t=None):
        v = self.covariates[name]
        if isinstance(v, StepFunction):
            return v(0.0 if t is None else t)
        return float(v)

    def sojourns(self):
        """Observed sojourns as ``(state, start, stop, to_state)`` with
        ``to_state = None`` when the sojourn ends by censoring or the horizon."""
        out = []
        state, start = self.initial_state, 0.0
        for ev in self.events:
            out.append((state, start, ev.time, ev.to_state))
            state, start = ev.to_state, ev.time
        if not self.state_space.is_absorbing(state):
            stop = min(self.censor_time, self.horizon)
            if stop > start:
                out.append((state, start, stop, None))
        return out


def build_event_history(rows, state_space, horizon, *, subject_id=None, initial_state=0,
                        censor_time=math.inf, covariates=None):
    """Validate raw transition rows into an :class:`EventHistory`.

    ``rows`` are mappings with keys ``time, from_state, to_state`` and an
    optional ``cost``, or tuples in that order.  Rows are taken in the order
    given; nothing is sorted or dropped.
    """
    events = []
    for row in rows:
        if isinstance(row, Mapping):
            t, h, j, c = row["time"], row["from_state"], row["to_state"], row.get("cost", 0.0)
        else:
            t, h, j, *rest = row
            c = rest[0] if rest else 0.0
        events.append(TransitionEvent(float(t), int(h), int(j), float(c)))
    if censor_time is None:
        censor_time = math.inf
    return EventHistory(subject_id, int(initial_state), tuple(events), float(censor_time),
                        float(horizon), state_space, covariates or {})


@dataclass(frozen=True)
class SojournTable:
    """Columnar view of every observed sojourn in a cohort.

    ``to_state`` is -1 for sojourns ended by censoring or the horizon.
    """

    subject: np.ndarray
    state: np.ndarray
    start: np.ndarray
    stop: np.ndarray
    to_state: np.ndarray


def sojourn_table(histories):
    subj, st, a, b, to = [], [], [], [], []
    for i, hist in enumerate(histories):
        for (h, s0, s1, j) in hist.sojourns():
            subj.append(i)
            st.append(h)
            a.append(s0)
            b.append(s1)
            to.append(-1 if j is None else j)
    return SojournTable(np.asarray(subj, dtype=int), np.asarray(st, dtype=int),
                        np.asarray(a, dtype=float), np.asarray(b, dtype=float),
                        np.asarray(to, dtype=int))


def _check_common(histories):
    if not histories:
        raise InvariantViolation("no histories supplied")
    ss, tau = histories[0].state_space, histories[0].horizon
    for h in histories[1:]:
        if h.state_space != ss or h.horizon != tau:
            raise MixedStateSpaces("histories differ in state space or horizon",
                                   subject_id=h.subject_id)
    return ss, tau


@dataclass(frozen=True)
class CountingProcesses:
    """Aggregated N_hj(t) and Y_h(t).

    ``y_h[h]`` stores the right-continuous companion R_h(t) = #{X(t) = h,
    U > t, t < τ}; the at-risk count Y_h(t) = R_h(t-) is obtained through
    :meth:`at_risk`.
    """

    n_hj: dict
    y_h: dict
    n_subjects: int
    state_space: StateSpace
    horizon: float

    def at_risk(self, h, t):
        return self.y_h[h].left(t)

    def transitions(self):
        return sorted(self.n_hj)


def counting_processes(histories):
    ss, tau = _check_common(histories)
    table = sojourn_table(histories)
    n_hj = {}
    done = table.to_state >= 0
    for h in range(ss.n_states):
        for j in range(ss.n_states):
            if h == j:
                continue
            m = done & (table.state == h) & (table.to_state == j)
            if m.any():
                n_hj[(h, j)] = StepFunction.from_increments(table.stop[m], np.ones(m.sum()))
    y_h = {}
    initial = np.bincount([hst.initial_state for hst in histories], minlength=ss.n_states)
    # absorbing occupancy: from absorption until censoring or the horizon
    absorbed = [(hst.final_state, hst.absorption_time, min(hst.censor_time, tau))
                for hst in histories if hst.absorbed]
    for h in range(ss.n_states):
        m = table.state == h
        entries = table.start[m & (table.start > 0)]
        exits = table.stop[m]
        if ss.is_absorbing(h):
            entries = np.array([a for (d, a, _) in absorbed if d == h], dtype=float)
            exits = np.array([b for (d, _, b) in absorbed if d == h], dtype=float)
        times = np.concatenate((entries, exits))
        inc = np.concatenate((np.ones(entries.size), -np.ones(exits.size)))
        y_h[h] = StepFunction.from_increments(times, inc, float(initial[h]))
    return CountingProcesses(n_hj, y_h, len(histories), ss, tau)
