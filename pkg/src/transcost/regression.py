"""Inverse-probability-of-censoring weighted cost regression.

Each subject contributes a block of cost records ``y_ig`` with design rows
``x_ig``.  Records are observed in a prefix of the block (once censored, a
subject stays censored).  The weighted random-effects GLS estimator uses

    X̃_i = W_i^{1/2} L_i^{-1} X_i,   Ỹ_i = W_i^{1/2} L_i^{-1} Y_i,

where ``L_i`` is the lower Cholesky factor of ``Ω_i = σ_u² I + σ_a² J``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (EmptySample, InsufficientPairsWarning, NonMonotoneObservation,
                     NonPositiveDefiniteOmega, NoConvergence, SingularA, SingularDesign,
                     SingularWorkingMatrix, ZeroCensoringSurvival)

# --------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class CostRegressionData:
    """Stacked cost records with subject blocks.

    Parameters
    ----------
    y : ndarray, shape (N,)
        Costs; values on unobserved records are ignored.
    X : ndarray, shape (N, p)
        Design rows.
    t : ndarray, shape (N,)
        Record end times, nondecreasing within subject.
    s : ndarray, shape (N,)
        Observation flags (0/1), nonincreasing within subject.
    subject : ndarray, shape (N,)
        Subject index ``0..n-1``; records of a subject are contiguous.
    strata : sequence, optional
        Censoring stratum of each subject (``None`` when unstratified).
    names : list of str, optional
        Column labels.
    """

    y: np.ndarray
    X: np.ndarray
    t: np.ndarray
    s: np.ndarray
    subject: np.ndarray
    strata: tuple = None
    names: list = field(default_factory=list)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float).reshape(-1)
        t = np.asarray(self.t, dtype=float).reshape(-1)
        s = np.asarray(self.s, dtype=float).reshape(-1)
        subj = np.asarray(self.subject, dtype=int).reshape(-1)
        n_rows = X.shape[0]
        if not (y.size == t.size == s.size == subj.size == n_rows):
            raise ValueError("y, X, t, s and subject must have matching lengths")
        if not np.all(np.isin(s, (0.0, 1.0))):
            raise ValueError("observation flags must be 0 or 1")
        if n_rows and (subj[0] != 0 or np.any(np.diff(subj) < 0)
                       or np.any(np.diff(subj) > 1)):
            raise ValueError("subject indices must be contiguous blocks numbered from 0")
        same = np.diff(subj) == 0
        if np.any(np.diff(t)[same] < 0):
            raise NonMonotoneObservation("record times must be nondecreasing within subject")
        if np.any(np.diff(s)[same] > 0):
            raise NonMonotoneObservation(
                "an observed record follows an unobserved one within a subject")
        if np.any(~np.isfinite(y[s == 1])):
            raise ValueError("observed records must carry finite costs")
        n = int(subj[-1]) + 1 if n_rows else 0
        strata = (None,) * n if self.strata is None else tuple(self.strata)
        if len(strata) != n:
            raise ValueError("one stratum label per subject is required")
        for name, val in (("X", X), ("y", np.where(s == 1, y, 0.0)), ("t", t), ("s", s),
                          ("subject", subj)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "strata", strata)
        names = list(self.names) or [f"x{k}" for k in range(X.shape[1])]
        object.__setattr__(self, "names", names)

    @property
    def n_subjects(self):
        return len(self.strata)

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def sizes(self):
        return np.bincount(self.subject, minlength=self.n_subjects)

    @classmethod
    def from_blocks(cls, blocks, strata=None, names=()):
        """Build from a list of ``(y_i, X_i, t_i, s_i)`` tuples."""
        ys, xs, ts, ss, subj = [], [], [], [], []
        for k, (yi, xi, ti, si) in enumerate(blocks):
            xi = np.atleast_2d(np.asarray(xi, dtype=float))
            ys.append(np.asarray(yi, dtype=float).reshape(-1))
            xs.append(xi)
            ts.append(np.asarray(ti, dtype=float).reshape(-1))
            ss.append(np.asarray(si, dtype=float).reshape(-1))
            subj.append(np.full(xi.shape[0], k))
        return cls(np.concatenate(ys), np.vstack(xs), np.concatenate(ts),
                   np.concatenate(ss), np.concatenate(subj), strata, list(names))


def ipc_weights(data, censoring, tau):
    """``w_ig = s_ig / Ĝ(min(t_ig, tau)- | stratum_i)``.

    ``censoring`` is a :class:`~transcost.survival.SurvivalFit` or a mapping
    from stratum label to one (as returned by ``censoring_survival``).
    """
    if not isinstance(censoring, dict):
        censoring = {None: censoring}
    strata = np.asarray(data.strata, dtype=object)[data.subject] if data.s.size else np.empty(0)
    w = np.zeros(data.s.size)
    tt = np.minimum(data.t, tau)
    for key, fit in censoring.items():
        rows = (strata == key) if data.s.size else np.zeros(0, bool)
        if key is None and len(censoring) == 1:
            rows = np.ones(data.s.size, bool)
        rows &= data.s == 1
        if not rows.any():
            continue
        g = np.asarray(fit.left(tt[rows]), dtype=float)
        if np.any(g <= 0):
            raise ZeroCensoringSurvival("Ĝ(t-) = 0 at an observed record",
                                        stratum=key, time=float(tt[rows][np.argmax(g <= 0)]))
        w[rows] = 1.0 / g
    missing = (data.s == 1) & (w == 0)
    if missing.any():
        raise ValueError("observed records in strata without a censoring estimate")
    return w


# --------------------------------------------------------------------------
# working covariance and the transformed blocks


def omega_matrix(n_i, sigma_u2, sigma_a2):
    return sigma_u2 * np.eye(n_i) + sigma_a2 * np.ones((n_i, n_i))


def _inverse_factors(sizes, sigma_u2, sigma_a2):
    out = {}
    for n_i in np.unique(sizes):
        om = omega_matrix(int(n_i), sigma_u2, sigma_a2)
        try:
            L = np.linalg.cholesky(om)
        except np.linalg.LinAlgError:
            raise NonPositiveDefiniteOmega(
                f"Ω is not positive definite (σ_u²={sigma_u2}, σ_a²={sigma_a2})") from None
        out[int(n_i)] = np.linalg.inv(L)
    return out


def _blocks_by_size(data):
    """Row indices grouped by block size: ``{n_i: (k, n_i) index array}``."""
    sizes = data.sizes
    starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
    out = {}
    for n_i in np.unique(sizes):
        if n_i == 0:
            continue
        sub = np.nonzero(sizes == n_i)[0]
        out[int(n_i)] = (sub, starts[sub][:, None] + np.arange(n_i)[None, :])
    return out


def transform(data, weights, sigma_u2=1.0, sigma_a2=0.0, columns=None):
    """``(X̃, Ỹ)`` stacked in the original row order.

    ``columns`` replaces ``X`` (used for the GEE derivative matrix).
    """
    X = data.X if columns is None else columns
    w = np.asarray(weights, dtype=float)
    if w.shape != data.y.shape or np.any(w < 0) or np.any(~np.isfinite(w)):
        raise ValueError("weights must be finite, nonnegative and one per record")
    if sigma_a2 == 0 and sigma_u2 > 0:
        sq = np.sqrt(w / sigma_u2)
        return X * sq[:, None], data.y * sq
    if sigma_u2 <= 0:
        raise NonPositiveDefiniteOmega("σ_u² must be positive")
    linv = _inverse_factors(data.sizes, sigma_u2, sigma_a2)
    Xt = np.empty_like(X)
    yt = np.empty_like(data.y)
    sw = np.sqrt(w)
    for n_i, (_, idx) in _blocks_by_size(data).items():
        li = linv[n_i]
        Xt[idx] = np.einsum("ab,kbp->kap", li, X[idx]) * sw[idx][:, :, None]
        yt[idx] = np.einsum("ab,kb->ka", li, data.y[idx]) * sw[idx]
    return Xt, yt


def _solve_spd(A, b, exc, what):
    try:
        c = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise exc(f"{what} is singular") from None
    d = np.diag(c)
    if d.min() <= 1e-7 * d.max():
        raise exc(f"{what} is numerically singular")
    return np.linalg.solve(c.T, np.linalg.solve(c, b))


# --------------------------------------------------------------------------
# fits


@dataclass(frozen=True)
class ReFit:
    """Weighted GLS or GEE fit with its sandwich covariance."""

    beta: np.ndarray
    sigma_u2: float
    sigma_a2: float
    sandwich: np.ndarray
    n_used: int
    n_subjects: int
    link: str = "identity"
    names: list = field(default_factory=list)
    iterations: int = 0
    score_norm: float = 0.0

    @property
    def se(self):
        return np.sqrt(np.clip(np.diag(self.sandwich), 0, None))

    def confidence_intervals(self, level=0.95):
        from scipy.stats import norm
        zq = norm.ppf(0.5 + level / 2)
        return np.column_stack((self.beta - zq * self.se, self.beta + zq * self.se))

    def summary(self):
        return {"names": list(self.names), "beta": self.beta.tolist(), "se": self.se.tolist(),
                "sigma_u2": self.sigma_u2, "sigma_a2": self.sigma_a2,
                "n_used": self.n_used, "n_subjects": self.n_subjects, "link": self.link,
                "iterations": self.iterations}


def _omega_params(omega, sigma_u2, sigma_a2, data, weights):
    if omega == "identity":
        return 1.0, 0.0
    if omega == "re":
        if sigma_u2 is None or sigma_a2 is None:
            return estimate_variance_components(data, weights)
        return float(sigma_u2), float(sigma_a2)
    if isinstance(omega, (tuple, list)) and len(omega) == 2:
        return float(omega[0]), float(omega[1])
    raise ValueError(f"unknown working covariance {omega!r}")


def _n_used(data, weights):
    return int(np.unique(data.subject[np.asarray(weights) > 0]).size)


def fit_weighted_gls(data, weights, omega="identity", sigma_u2=None, sigma_a2=None):
    """Weighted GLS ``β̂_w = (Σ X̃_i'X̃_i)^{-1} Σ X̃_i'Ỹ_i``.

    Parameters
    ----------
    data : CostRegressionData
    weights : ndarray
        Record weights, typically from :func:`ipc_weights`.
    omega : {"identity", "re"} or (σ_u², σ_a²)
        Working covariance.  ``"re"`` uses the supplied components, or
        estimates them by :func:`estimate_variance_components`.

    Returns
    -------
    ReFit
    """
    w = np.asarray(weights, dtype=float)
    if not np.any(w > 0):
        raise EmptySample("no record has positive weight")
    su2, sa2 = _omega_params(omega, sigma_u2, sigma_a2, data, w)
    Xt, yt = transform(data, w, su2, sa2)
    A = Xt.T @ Xt
    beta = _solve_spd(A, Xt.T @ yt, SingularDesign, "Σ X̃'X̃")
    cov = _sandwich_from(data, Xt, yt - Xt @ beta, A)
    return ReFit(beta, su2, sa2, cov, _n_used(data, w), data.n_subjects, "identity",
                 list(data.names), 1, float(np.linalg.norm(Xt.T @ (yt - Xt @ beta))))


def _sandwich_from(data, Dt, vt, A_sum):
    """``Â^{-1} B̂ Â^{-1} / n`` from transformed derivative rows and residuals."""
    n = data.n_subjects
    p = Dt.shape[1]
    scores = np.zeros((n, p))
    np.add.at(scores, data.subject, Dt * vt[:, None])
    A = A_sum / n
    B = scores.T @ scores / n
    try:
        ainv = np.linalg.inv(A)
    except np.linalg.LinAlgError:
        raise SingularA("the derivative matrix A is singular") from None
    if not np.all(np.isfinite(ainv)):
        raise SingularA("the derivative matrix A is singular")
    cov = ainv @ B @ ainv.T / n
    return 0.5 * (cov + cov.T)


def estimate_variance_components(data, weights, beta_init=None, floor=1e-8):
    """Method-of-moments ``(σ_u², σ_a²)`` from weighted residuals.

    ``σ_u² + σ_a²`` is the weighted mean squared residual over observed
    records.  ``σ_a²`` is the weighted mean within-subject cross-product of
    residuals over observed pairs, truncated at 0; each pair is weighted by
    the weight of its later record.  ``σ_u²`` is floored at ``floor`` times
    the total variance (or ``floor`` when that is 0).
    """
    w = np.asarray(weights, dtype=float)
    if beta_init is None:
        Xt, yt = transform(data, w)
        beta_init = _solve_spd(Xt.T @ Xt, Xt.T @ yt, SingularDesign, "Σ X̃'X̃")
    e = data.y - data.X @ np.asarray(beta_init, dtype=float)
    obs = w > 0
    if not obs.any():
        raise EmptySample("no record has positive weight")
    total = float(np.sum(w[obs] * e[obs] ** 2) / np.sum(w[obs]))
    num, den = 0.0, 0.0
    for n_i, (_, idx) in _blocks_by_size(data).items():
        if n_i < 2:
            continue
        E, W = e[idx], w[idx]
        for l in range(1, n_i):
            wl = W[:, l]
            m = wl > 0
            if not m.any():
                continue
            cross = E[m, :l] * E[m, l][:, None]
            num += float(np.sum(wl[m][:, None] * cross))
            den += float(np.sum(wl[m]) * l)
    if den == 0:
        warnings.warn("no subject has two observed records; σ_a² set to 0",
                      InsufficientPairsWarning, stacklevel=2)
        sa2 = 0.0
    else:
        sa2 = max(num / den, 0.0)
    lower = floor * total if total > 0 else floor
    su2 = max(total - sa2, lower)
    return su2, sa2


# --------------------------------------------------------------------------
# generalized estimating equations


@dataclass(frozen=True)
class Link:
    """Link ``η = h(μ)`` with its inverse and ``dμ/dη``."""

    name: str
    link: object
    inverse: object
    dmu_deta: object


LINKS = {
    "identity": Link("identity", lambda m: m, lambda e: e, lambda e: np.ones_like(e)),
    "log": Link("log", np.log, np.exp, np.exp),
}


def get_link(link):
    if isinstance(link, Link):
        return link
    try:
        return LINKS[link]
    except KeyError:
        raise ValueError(f"unknown link {link!r}") from None


def estimating_function(data, weights, beta, link="identity", sigma_u2=1.0, sigma_a2=0.0):
    """``Σ_i D_i' L_i^{-T} W_i L_i^{-1} (Y_i - μ_i)`` at ``beta``."""
    lk = get_link(link)
    eta = data.X @ beta
    mu = lk.inverse(eta)
    D = data.X * lk.dmu_deta(eta)[:, None]
    Dt, rt = _transformed_residuals(data, weights, D, mu, sigma_u2, sigma_a2)
    return Dt.T @ rt


def _transformed_residuals(data, weights, D, mu, sigma_u2, sigma_a2):
    resid = CostRegressionData(np.where(data.s == 1, data.y - mu, 0.0), D, data.t, data.s,
                               data.subject, data.strata, data.names)
    return transform(resid, weights, sigma_u2, sigma_a2)


def fit_weighted_gee(data, weights, link="identity", working="identity", sigma_u2=None,
                     sigma_a2=None, tolerance=1e-10, max_iter=100, beta0=None):
    """Solve the weighted estimating equation by damped Fisher scoring.

    Parameters
    ----------
    link : {"identity", "log"} or Link
    working : {"identity", "re"} or (σ_u², σ_a²)
        Working covariance ``Ω_i``.  ``"re"`` without components estimates
        them from a first-stage identity-link fit.
    tolerance : float
        Convergence when the scoring step is below ``tolerance`` relative to
        ``1 + |β|`` in max norm.

    Returns
    -------
    ReFit
    """
    w = np.asarray(weights, dtype=float)
    if not np.any(w > 0):
        raise EmptySample("no record has positive weight")
    lk = get_link(link)
    su2, sa2 = _omega_params(working, sigma_u2, sigma_a2, data, w)
    try:
        _inverse_factors(data.sizes, su2, sa2)
    except NonPositiveDefiniteOmega as exc:
        raise SingularWorkingMatrix(str(exc)) from None
    p = data.p
    if beta0 is not None:
        beta = np.asarray(beta0, dtype=float).copy()
    elif lk.name == "identity":
        beta = np.zeros(p)
    else:
        beta = _log_start(data, w)

    def state(b):
        eta = data.X @ b
        mu = lk.inverse(eta)
        D = data.X * lk.dmu_deta(eta)[:, None]
        Dt, rt = _transformed_residuals(data, w, D, mu, su2, sa2)
        return Dt, rt, Dt.T @ rt

    Dt, rt, U = state(beta)
    for it in range(1, max_iter + 1):
        step = _solve_spd(Dt.T @ Dt, U, SingularDesign, "Σ D̃'D̃")
        if np.max(np.abs(step)) < tolerance * (1 + np.max(np.abs(beta))):
            A = _gee_derivative(data, w, beta, lk, su2, sa2, Dt)
            cov = _sandwich_from(data, Dt, rt, A)
            return ReFit(beta, su2, sa2, cov, _n_used(data, w), data.n_subjects, lk.name,
                         list(data.names), it, float(np.linalg.norm(U)))
        scale = 1.0
        base = np.linalg.norm(U)
        for _ in range(40):
            cand = beta + scale * step
            with np.errstate(over="ignore", invalid="ignore"):
                Dc, rc, Uc = state(cand)
            if np.all(np.isfinite(Uc)) and np.linalg.norm(Uc) <= base * (1 + 1e-12) + 1e-300:
                break
            scale *= 0.5
        else:
            # accept the full step when no damped step lowers the score norm
            cand = beta + step
            Dc, rc, Uc = state(cand)
        beta, Dt, rt, U = cand, Dc, rc, Uc
    raise NoConvergence(f"GEE iterations did not converge in {max_iter} steps",
                        beta=beta.tolist())


def _log_start(data, w):
    """Starting value for a log link: weighted least squares of
    ``log(max(y, mean/10))`` on the design."""
    obs = w > 0
    mean = float(np.sum(w[obs] * data.y[obs]) / np.sum(w[obs]))
    if mean <= 0:
        return np.zeros(data.p)
    eta = np.log(np.maximum(data.y[obs], 0.1 * mean))
    sw = np.sqrt(w[obs])
    beta, *_ = np.linalg.lstsq(data.X[obs] * sw[:, None], eta * sw, rcond=None)
    return beta


def _gee_derivative(data, w, beta, lk, su2, sa2, Dt):
    """``-∂U/∂β`` summed over subjects."""
    if lk.name == "identity":
        return Dt.T @ Dt
    if lk.name == "log":
        mu = np.exp(data.X @ beta)
        # M (Y - μ) with M = L^{-T} W L^{-1}, computed blockwise
        mr = _apply_m(data, w, np.where(data.s == 1, data.y - mu, 0.0), su2, sa2)
        return Dt.T @ Dt - (data.X * (mu * mr)[:, None]).T @ data.X

    def U(b):
        return estimating_function(data, w, b, lk, su2, sa2)
    p = beta.size
    A = np.zeros((p, p))
    eps = np.finfo(float).eps ** (1 / 3)
    for k in range(p):
        hk = eps * max(1.0, abs(beta[k]))
        e = np.zeros(p)
        e[k] = hk
        A[:, k] = -(U(beta + e) - U(beta - e)) / (2 * hk)
    return 0.5 * (A + A.T)


def _apply_m(data, w, v, su2, sa2):
    """``L^{-T} W L^{-1} v`` blockwise."""
    if sa2 == 0:
        return w * v / su2
    linv = _inverse_factors(data.sizes, su2, sa2)
    out = np.empty_like(v)
    for n_i, (_, idx) in _blocks_by_size(data).items():
        li = linv[n_i]
        inner = np.einsum("ab,kb->ka", li, v[idx]) * w[idx]
        out[idx] = np.einsum("ba,kb->ka", li, inner)
    return out


def sandwich_variance(fit, data, weights):
    """Plug-in ``Â^{-1} B̂ Â^{-1} / n`` at ``fit.beta``."""
    w = np.asarray(weights, dtype=float)
    lk = get_link(fit.link)
    eta = data.X @ fit.beta
    mu = lk.inverse(eta)
    D = data.X * lk.dmu_deta(eta)[:, None]
    Dt, rt = _transformed_residuals(data, w, D, mu, fit.sigma_u2, fit.sigma_a2)
    A = _gee_derivative(data, w, fit.beta, lk, fit.sigma_u2, fit.sigma_a2, Dt)
    return _sandwich_from(data, Dt, rt, A)


def ols(X, y):
    """Ordinary least squares via ``lstsq`` (reference implementation)."""
    beta, *_ = np.linalg.lstsq(np.asarray(X, dtype=float), np.asarray(y, dtype=float),
                               rcond=None)
    return beta
