"""Cumulative intensities and transition probabilities for Markov
multi-state models."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidFactor, JumpWithEmptyRiskSet, NoConvergence
from .stepfn import StepFunction


@dataclass(frozen=True)
class CumulativeIntensityMatrix:
    """Off-diagonal cumulative intensities; the diagonal is implied."""

    a_hj: dict
    n_states: int

    def jump_times(self, start=0.0):
        ts = [f.jump_times for f in self.a_hj.values()]
        if not ts:
            return np.empty(0)
        t = np.unique(np.concatenate(ts))
        return t[t > start]

    def increments(self, times):
        """Array of ΔA(u) matrices (diagonal included) at ``times``."""
        m = self.n_states
        out = np.zeros((len(times), m, m))
        for (h, j), f in self.a_hj.items():
            dv = f(times) - f.left(times)
            out[:, h, j] += dv
            out[:, h, h] -= dv
        return out

    def check(self, atol=1e-12):
        for (h, j), f in self.a_hj.items():
            if f.initial_value != 0 or np.any(f.jumps < 0):
                raise InvalidFactor(f"A_{h}{j} must start at 0 and be nondecreasing")
        t = self.jump_times(-np.inf)
        if t.size:
            d = self.increments(t)
            diag = np.einsum("kii->ki", d)
            if np.any(diag < -1 - atol):
                raise InvalidFactor("total jump of a row exceeds one")


@dataclass(frozen=True)
class TransitionMatrixPath:
    """P(s, t) evaluated on a sorted grid; constant between grid points.

    ``times[0]`` is the start time ``s`` with the identity matrix.
    """

    times: np.ndarray
    matrices: np.ndarray

    def _index(self, t, side):
        return np.searchsorted(self.times, np.asarray(t, dtype=float), side=side) - 1

    def at(self, t):
        """P(s, t), right-continuous in ``t``."""
        idx = self._index(t, "right")
        eye = np.eye(self.matrices.shape[1])
        if np.ndim(idx) == 0:
            return eye if idx < 0 else self.matrices[idx]
        out = self.matrices[np.clip(idx, 0, None)].copy()
        out[idx < 0] = eye
        return out

    def before(self, t):
        """P(s, t-), the product over factors strictly before ``t``."""
        idx = self._index(t, "left")
        eye = np.eye(self.matrices.shape[1])
        if np.ndim(idx) == 0:
            return eye if idx < 0 else self.matrices[idx]
        out = self.matrices[np.clip(idx, 0, None)].copy()
        out[idx < 0] = eye
        return out

    def entry(self, i, h):
        """P_ih(s, ·) as a step function."""
        init = 1.0 if i == h else 0.0
        return StepFunction(self.times[1:], self.matrices[1:, i, h], init)

    def row_sum_error(self):
        return float(np.max(np.abs(self.matrices.sum(axis=2) - 1.0)))


def nelson_aalen(cp):
    """ΔA_hj(t) = ΔN_hj(t) / Y_h(t) at each observed h→j transition time."""
    a = {}
    for (h, j), n in cp.n_hj.items():
        t = n.jump_times
        dn = n.jumps
        y = cp.at_risk(h, t)
        bad = (dn > 0) & (y <= 0)
        if np.any(bad):
            raise JumpWithEmptyRiskSet(
                f"transition {h}->{j} at t={t[bad][0]} with empty risk set",
                transition=(h, j), time=float(t[bad][0]))
        a[(h, j)] = StepFunction.from_increments(t, dn / y)
    return CumulativeIntensityMatrix(a, cp.state_space.n_states)


def aalen_johansen(cim, times=(), start=0.0):
    """Product-integral P(s, t) = Π_{s<u<=t} (I + ΔA(u)).

    The returned grid is the union of the jump times after ``start`` and any
    requested ``times``.
    """
    m = cim.n_states
    jt = cim.jump_times(start)
    req = np.asarray(times, dtype=float).reshape(-1)
    grid = np.union1d(jt, req[req > start])
    factors = np.eye(m) + cim.increments(grid) if grid.size else np.empty((0, m, m))
    # a full exit from a row can round to -1e-16 on the diagonal
    if grid.size and np.any(factors < -1e-12):
        k = int(np.argwhere(factors < -1e-12)[0, 0])
        raise InvalidFactor(f"negative entry in I + dA at t={grid[k]}", time=float(grid[k]))
    mats = np.empty((grid.size + 1, m, m))
    mats[0] = np.eye(m)
    p = mats[0]
    for k in range(grid.size):
        p = p @ factors[k]
        mats[k + 1] = p
    return TransitionMatrixPath(np.concatenate(([start], grid)), mats)


def generator_matrix(alpha, n_states, t):
    q = np.zeros((n_states, n_states))
    for (h, j), f in alpha.items():
        v = float(f(t))
        if v < 0:
            raise ValueError(f"intensity {h}->{j} is negative at t={t}")
        q[h, j] += v
        q[h, h] -= v
    return q


def _segments(t0, t1, breakpoints):
    b = np.asarray(sorted(set(float(x) for x in breakpoints)), dtype=float)
    inner = b[(b > t0) & (b < t1)]
    return np.concatenate(([t0], inner, [t1]))


def propagate(alpha, n_states, knots, steps):
    """Solve dP/dt = P Q(t) with ``steps`` classical Runge-Kutta steps in each
    knot interval.

    Stage evaluations are kept inside the current interval so that
    intensities that jump at a knot are sampled from the correct side.
    Returns ``(nodes, matrices)`` on the fine grid.
    """
    nodes = [knots[0]]
    mats = [np.eye(n_states)]
    p = mats[0]
    for a, b in zip(knots[:-1], knots[1:]):
        h = (b - a) / steps
        inner_b = np.nextafter(b, a)
        for k in range(steps):
            t = a + k * h
            q1 = generator_matrix(alpha, n_states, t)
            q2 = generator_matrix(alpha, n_states, min(t + h / 2, inner_b))
            q4 = generator_matrix(alpha, n_states, min(t + h, inner_b))
            k1 = p @ q1
            k2 = (p + 0.5 * h * k1) @ q2
            k3 = (p + 0.5 * h * k2) @ q2
            k4 = (p + h * k3) @ q4
            p = p + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            nodes.append(b if k == steps - 1 else a + (k + 1) * h)
            mats.append(p)
    return np.asarray(nodes), np.asarray(mats)


def product_integral_parametric(alpha, n_states, t_end, breakpoints=(), tol=1e-8,
                                start=0.0, initial_steps=4, max_halvings=16):
    """Transition probabilities for intensity functions ``alpha[(h, j)](t)``.

    The step is halved until two successive refinements differ by less than
    ``tol`` (max norm) at the common grid points.  Supplying the
    discontinuities of piecewise-constant intensities as ``breakpoints``
    keeps every step inside a smooth piece.
    """
    knots = _segments(start, t_end, breakpoints)
    steps = initial_steps
    nodes, prev = propagate(alpha, n_states, knots, steps)
    for _ in range(max_halvings):
        steps *= 2
        nodes2, cur = propagate(alpha, n_states, knots, steps)
        if np.max(np.abs(cur[::2] - prev)) < tol:
            return TransitionMatrixPath(nodes2, cur)
        nodes, prev = nodes2, cur
    raise NoConvergence("product integral did not converge", tol=tol, steps=steps)
