"""Multiplicative-intensity regression for transition intensities.

One composite coefficient vector is shared by all transition types; the
type-specific covariate vector z_hj(t) comes from a :class:`DesignRecipe`.
Each type keeps its own Breslow baseline.  Ties use the Breslow
approximation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .design import DesignRecipe
from .errors import (MonotoneLikelihood, NoConvergence, NoEvents, SingularInformation)
from .event_history import sojourn_table
from .markov import CumulativeIntensityMatrix, aalen_johansen
from .stepfn import StepFunction


@dataclass(frozen=True)
class CoxSpec:
    recipe: DesignRecipe
    transitions: tuple | None = None

    @property
    def p(self):
        return self.recipe.p


@dataclass(frozen=True)
class CoxFit:
    beta: np.ndarray
    baselines: dict
    loglik: float
    information: np.ndarray
    iterations: int
    grad_norm: float
    spec: CoxSpec
    n_states: int
    names: list = field(default_factory=list)
    active: np.ndarray | None = None

    @property
    def covariance(self):
        """Inverse information; coefficients of all-zero columns get NaN."""
        p = self.beta.size
        act = np.ones(p, bool) if self.active is None else self.active
        cov = np.full((p, p), np.nan)
        cov[np.ix_(act, act)] = np.linalg.inv(self.information[np.ix_(act, act)])
        return cov

    @property
    def se(self):
        return np.sqrt(np.diag(self.covariance))

    def summary(self):
        return {"names": self.names, "beta": self.beta.tolist(), "se": self.se.tolist(),
                "loglik": self.loglik, "iterations": self.iterations,
                "grad_norm": self.grad_norm}


def _covariate_matrix(histories, names, subj, t):
    """Values of the named covariates for (subject, time) pairs."""
    out = {}
    for name in names:
        vals = [h.covariates[name] for h in histories]
        if all(not callable(v) for v in vals):
            out[name] = np.asarray(vals, dtype=float)[subj]
            continue
        col = np.empty(subj.size)
        for s in np.unique(subj):
            m = subj == s
            v = vals[s]
            col[m] = v(t[m]) if callable(v) else float(v)
        out[name] = col
    return out


def _term_columns(recipe, h, j, cov, t):
    return recipe.matrix(h, j, cov, t)


class _TypeBlock:
    """Risk-set bookkeeping for one transition type."""

    def __init__(self, h, j, start, stop, is_event, subj, histories, recipe, dense):
        self.h, self.j = h, j
        ev_times = stop[is_event]
        self.times, self.d = np.unique(ev_times, return_counts=True)
        names = sorted(recipe.covariates_used())
        self.dense = dense
        if not dense:
            cov = _covariate_matrix(histories, names, subj, np.zeros(subj.size))
            x = _term_columns(recipe, h, j, cov, np.zeros(subj.size))
            order_b = np.argsort(stop, kind="stable")
            order_a = np.argsort(start, kind="stable")
            self.x = x
            self.b_sorted, self.ob = stop[order_b], order_b
            self.a_sorted, self.oa = start[order_a], order_a
            self.ib = np.searchsorted(self.b_sorted, self.times, side="left")
            self.ia = np.searchsorted(self.a_sorted, self.times, side="left")
            self.x_events_sum = x[is_event].sum(axis=0)
            self.x_events = x[is_event]
        else:
            pk, pe = [], []
            for k, t in enumerate(self.times):
                idx = np.nonzero((start < t) & (stop >= t))[0]
                pk.append(np.full(idx.size, k))
                pe.append(idx)
            pk = np.concatenate(pk) if pk else np.empty(0, int)
            pe = np.concatenate(pe) if pe else np.empty(0, int)
            tp = self.times[pk]
            cov = _covariate_matrix(histories, names, subj[pe], tp)
            self.pair_k, self.pair_x = pk, _term_columns(recipe, h, j, cov, tp)
            ev_pair = is_event[pe] & (stop[pe] == tp)
            self.x_events = self.pair_x[ev_pair]
            self.x_events_sum = self.x_events.sum(axis=0)

    def sums(self, beta):
        """S0, S1, S2 at each event time, plus the shift used for S0."""
        p = beta.size
        if not self.dense:
            eta = self.x @ beta
            c = eta.max() if eta.size else 0.0
            e = np.exp(eta - c)
            ex = e[:, None] * self.x
            exx = ex[:, :, None] * self.x[:, None, :]

            def suffix(vals, order, idx):
                v = vals[order]
                cs = np.concatenate((np.cumsum(v[::-1], axis=0)[::-1], np.zeros((1,) + v.shape[1:])))
                return cs[idx]
            s0 = suffix(e, self.ob, self.ib) - suffix(e, self.oa, self.ia)
            s1 = suffix(ex, self.ob, self.ib) - suffix(ex, self.oa, self.ia)
            s2 = suffix(exx, self.ob, self.ib) - suffix(exx, self.oa, self.ia)
        else:
            eta = self.pair_x @ beta
            c = eta.max() if eta.size else 0.0
            e = np.exp(eta - c)
            K = self.times.size
            s0 = np.bincount(self.pair_k, e, minlength=K)
            s1 = np.column_stack([np.bincount(self.pair_k, e * self.pair_x[:, a], minlength=K)
                                  for a in range(p)]) if p else np.zeros((K, 0))
            s2 = np.zeros((K, p, p))
            for a in range(p):
                for b in range(a, p):
                    v = np.bincount(self.pair_k, e * self.pair_x[:, a] * self.pair_x[:, b], minlength=K)
                    s2[:, a, b] = v
                    s2[:, b, a] = v
        return s0, s1, s2, c


class PartialLikelihood:
    """Breslow log partial likelihood over all modelled transition types."""

    def __init__(self, histories, spec, dense=None):
        if not histories:
            raise NoEvents("no histories supplied")
        self.histories = histories
        self.spec = spec
        self.n_states = histories[0].state_space.n_states
        tv = any(callable(v) for h in histories for v in h.covariates.values())
        self.dense = (spec.recipe.time_dependent or tv) if dense is None else dense
        tab = sojourn_table(histories)
        types = spec.transitions
        if types is None:
            types = sorted({(int(h), int(j)) for h, j in zip(tab.state, tab.to_state) if j >= 0})
        self.blocks = []
        for (h, j) in types:
            m = tab.state == h
            is_event = (tab.to_state[m] == j)
            if not is_event.any():
                continue
            self.blocks.append(_TypeBlock(h, j, tab.start[m], tab.stop[m], is_event,
                                          tab.subject[m], histories, spec.recipe, self.dense))
        if not self.blocks:
            raise NoEvents("no observed transitions of the modelled types")

    @property
    def p(self):
        return self.spec.p

    def active_columns(self):
        """Columns that are nonzero somewhere in a risk set."""
        act = np.zeros(self.p, bool)
        for blk in self.blocks:
            x = blk.pair_x if blk.dense else blk.x
            if x.size:
                act |= np.any(x != 0, axis=0)
        return act

    def evaluate(self, beta):
        beta = np.asarray(beta, dtype=float)
        p = beta.size
        ll, grad, info = 0.0, np.zeros(p), np.zeros((p, p))
        for blk in self.blocks:
            s0, s1, s2, c = blk.sums(beta)
            if np.any(s0 <= 0):
                raise SingularInformation("empty risk set at an event time")
            ll += float(blk.x_events_sum @ beta - np.sum(blk.d * (np.log(s0) + c)))
            mean = s1 / s0[:, None]
            grad += blk.x_events_sum - (blk.d[:, None] * mean).sum(axis=0)
            info += np.einsum("k,kab->ab", blk.d, s2 / s0[:, None, None]
                              - mean[:, :, None] * mean[:, None, :])
        return ll, grad, info

    def loglik(self, beta):
        return self.evaluate(beta)[0]

    def score(self, beta):
        return self.evaluate(beta)[1]

    def baselines(self, beta):
        out = {}
        for blk in self.blocks:
            s0, _, _, c = blk.sums(np.asarray(beta, dtype=float))
            out[(blk.h, blk.j)] = StepFunction.from_increments(blk.times, blk.d / (s0 * np.exp(c)))
        return out


def fit_cox(histories, spec, tolerance=1e-9, max_iter=100, beta_bound=50.0, beta0=None,
            dense=None):
    """Maximise the Breslow partial likelihood by damped Newton iterations.

    Convergence is declared when the full Newton step is below
    ``tolerance`` in max norm.  Each accepted step does not decrease the
    log partial likelihood; the step is halved until it does.  A coefficient
    vector whose norm exceeds ``beta_bound`` signals a monotone likelihood.
    """
    pl = PartialLikelihood(histories, spec, dense=dense)
    beta = np.zeros(pl.p) if beta0 is None else np.asarray(beta0, dtype=float).copy()
    # coefficients of columns that vanish on every risk set are not identified; keep them at 0
    act = pl.active_columns()
    beta[~act] = 0.0
    sub = np.ix_(act, act)
    ll, grad, info = pl.evaluate(beta)
    for it in range(1, max_iter + 1):
        step = np.zeros(pl.p)
        if act.any():
            try:
                chol = np.linalg.cholesky(info[sub])
            except np.linalg.LinAlgError:
                if np.linalg.norm(beta) > 0.5 * beta_bound:
                    raise MonotoneLikelihood("information degenerate at large coefficients",
                                             beta=beta.tolist())
                raise SingularInformation("information matrix is not positive definite",
                                          beta=beta.tolist())
            step[act] = np.linalg.solve(chol.T, np.linalg.solve(chol, grad[act]))
        if np.max(np.abs(step), initial=0.0) < tolerance:
            return CoxFit(beta, pl.baselines(beta), ll, info, it,
                          float(np.linalg.norm(grad)), spec, pl.n_states, spec.recipe.names, act)
        scale = 1.0
        for _ in range(60):
            cand = beta + scale * step
            try:
                ll_c, grad_c, info_c = pl.evaluate(cand)
            except (FloatingPointError, SingularInformation):
                ll_c = -np.inf
            if np.isfinite(ll_c) and ll_c >= ll:
                break
            scale *= 0.5
        else:
            raise NoConvergence("step halving failed to increase the partial likelihood",
                                beta=beta.tolist())
        beta, ll, grad, info = cand, ll_c, grad_c, info_c
        if np.linalg.norm(beta) > beta_bound:
            raise MonotoneLikelihood(
                f"|beta| exceeded {beta_bound}; the partial likelihood appears monotone",
                beta=beta.tolist())
    raise NoConvergence(f"Newton iterations did not converge in {max_iter} steps",
                        beta=beta.tolist())


def predict_profile(fit, z, horizon, times=()):
    """Cumulative intensities and transition probabilities at a fixed profile.

    ``z`` maps covariate names to fixed values.
    """
    a = {}
    recipe = fit.spec.recipe
    for (h, j), base in fit.baselines.items():
        keep = base.jump_times <= horizon
        t = base.jump_times[keep]
        d0 = base.jumps[keep]
        if t.size:
            cov = {name: np.full(t.size, float(z[name])) for name in recipe.covariates_used()}
            x = _term_columns(recipe, h, j, cov, t)
            a[(h, j)] = StepFunction.from_increments(t, np.exp(x @ fit.beta) * d0)
        else:
            a[(h, j)] = StepFunction()
    cim = CumulativeIntensityMatrix(a, fit.n_states)
    return cim, aalen_johansen(cim, times)
