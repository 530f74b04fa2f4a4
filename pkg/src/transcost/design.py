"""Design-row recipes shared by the intensity and cost regressions.

A recipe is a list of terms.  Each term contributes one column equal to

    [(h, j) in transitions] * basis(t) * covariate(interaction)

where ``basis`` is ``"1"``, ``"t"``, ``"t2"`` or a covariate name.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TIME_BASES = ("1", "t", "t2")


@dataclass(frozen=True)
class Term:
    basis: str = "1"
    transitions: frozenset | None = None
    interaction: str | None = None
    name: str | None = None

    def __post_init__(self):
        if self.transitions is not None:
            object.__setattr__(self, "transitions",
                               frozenset(tuple(int(x) for x in tr) for tr in self.transitions))

    @property
    def label(self):
        if self.name:
            return self.name
        parts = [self.basis]
        if self.interaction:
            parts.append(self.interaction)
        if self.transitions is not None:
            parts.append("|" + ",".join(f"{h}{j}" for h, j in sorted(self.transitions)))
        return ":".join(parts)

    @property
    def time_power(self):
        return {"1": 0, "t": 1, "t2": 2}.get(self.basis)

    def applies(self, h, j):
        return self.transitions is None or (h, j) in self.transitions

    def covariates_used(self):
        out = set()
        if self.basis not in TIME_BASES:
            out.add(self.basis)
        if self.interaction:
            out.add(self.interaction)
        return out

    def value(self, h, j, cov, t):
        if not self.applies(h, j):
            return 0.0
        p = self.time_power
        v = t ** p if p is not None else cov(self.basis)
        if self.interaction:
            v = v * cov(self.interaction)
        return float(v)

    def to_dict(self):
        return {"basis": self.basis,
                "transitions": None if self.transitions is None else sorted(map(list, self.transitions)),
                "interaction": self.interaction, "name": self.name}

    @classmethod
    def from_dict(cls, d):
        tr = d.get("transitions")
        return cls(basis=str(d.get("basis", "1")),
                   transitions=None if tr is None else frozenset(tuple(x) for x in tr),
                   interaction=d.get("interaction"), name=d.get("name"))


def _lookup(z, t):
    if callable(z):
        return lambda name: z(name, t)

    def get(name):
        v = z[name]
        return v(t) if callable(v) else float(v)
    return get


@dataclass(frozen=True)
class DesignRecipe:
    terms: tuple

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))

    @property
    def p(self):
        return len(self.terms)

    @property
    def names(self):
        return [term.label for term in self.terms]

    @property
    def time_dependent(self):
        return any(term.time_power not in (None, 0) for term in self.terms)

    def covariates_used(self):
        out = set()
        for term in self.terms:
            out |= term.covariates_used()
        return out

    def row(self, h, j, z, t):
        """Design row for transition ``h -> j`` at time ``t``.

        ``z`` maps covariate names to values (or step functions of time), or
        is a callable ``z(name, t)``.
        """
        cov = _lookup(z, t)
        return np.array([term.value(h, j, cov, t) for term in self.terms])

    def matrix(self, h, j, cov, t):
        """Design rows for transition ``h -> j`` at times ``t``.

        ``cov`` maps covariate names to arrays aligned with ``t``.
        """
        t = np.asarray(t, dtype=float).reshape(-1)
        cols = []
        for term in self.terms:
            if not term.applies(h, j):
                cols.append(np.zeros(t.size))
                continue
            p = term.time_power
            v = t ** p if p is not None else np.asarray(cov[term.basis], dtype=float)
            if term.interaction:
                v = v * np.asarray(cov[term.interaction], dtype=float)
            cols.append(np.broadcast_to(v, t.shape).astype(float))
        return np.column_stack(cols) if cols else np.zeros((t.size, 0))

    def builder(self, z, h, j):
        """Profile builder ``t -> row`` for a fixed covariate profile."""
        return lambda t: self.row(h, j, z, t)

    def to_list(self):
        return [term.to_dict() for term in self.terms]

    @classmethod
    def from_list(cls, items):
        return cls(tuple(Term.from_dict(d) for d in items))

    @classmethod
    def by_transition(cls, transitions, time_bases=("1",), covariates=(), shared_covariates=True):
        """Type dummies (times the requested time bases) plus covariate terms."""
        terms = []
        for tr in transitions:
            for b in time_bases:
                terms.append(Term(b, frozenset({tuple(tr)})))
        for c in covariates:
            if shared_covariates:
                terms.append(Term(c))
            else:
                terms.extend(Term(c, frozenset({tuple(tr)})) for tr in transitions)
        return cls(tuple(terms))
