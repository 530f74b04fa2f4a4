"""Right-continuous step functions and the integrals built on them."""

from __future__ import annotations

import numpy as np


def _readonly(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True).reshape(-1)
    a.setflags(write=False)
    return a


class StepFunction:
    """Right-continuous piecewise-constant function on the real line.

    Parameters
    ----------
    jump_times : array-like
        Strictly increasing finite breakpoints.
    values : array-like
        Value taken from each breakpoint onwards (same length as
        ``jump_times``).
    initial_value : float
        Value before the first breakpoint.

    Notes
    -----
    A breakpoint whose value equals the previous value is allowed; it is a
    jump of size zero and still appears in :attr:`jump_times`.
    """

    __slots__ = ("jump_times", "values", "initial_value")

    def __init__(self, jump_times=(), values=(), initial_value=0.0):
        jt = _readonly(jump_times)
        vals = _readonly(values)
        if jt.shape != vals.shape:
            raise ValueError("jump_times and values must have the same length")
        if jt.size and not np.all(np.isfinite(jt)):
            raise ValueError("jump times must be finite")
        if jt.size > 1 and not np.all(np.diff(jt) > 0):
            raise ValueError("jump times must be strictly increasing")
        object.__setattr__(self, "jump_times", jt)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "initial_value", float(initial_value))

    def __setattr__(self, name, value):
        raise AttributeError("StepFunction is immutable")

    # construction helpers -------------------------------------------------
    @classmethod
    def constant(cls, c):
        return cls((), (), c)

    @classmethod
    def from_increments(cls, times, increments, initial_value=0.0):
        """Cumulative sum of ``increments`` placed at ``times`` (ties merged)."""
        times = np.asarray(times, dtype=float).reshape(-1)
        inc = np.asarray(increments, dtype=float).reshape(-1)
        if times.size == 0:
            return cls.constant(initial_value)
        order = np.argsort(times, kind="stable")
        times, inc = times[order], inc[order]
        uniq, start = np.unique(times, return_index=True)
        summed = np.add.reduceat(inc, start)
        return cls(uniq, initial_value + np.cumsum(summed), initial_value)

    # evaluation -----------------------------------------------------------
    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.jump_times, t_arr, side="right") - 1
        out = np.where(idx >= 0, self.values[np.clip(idx, 0, None)] if self.values.size
                       else self.initial_value, self.initial_value)
        return float(out) if out.ndim == 0 else out

    def left(self, t):
        """Left limit f(t-)."""
        t_arr = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.jump_times, t_arr, side="left") - 1
        out = np.where(idx >= 0, self.values[np.clip(idx, 0, None)] if self.values.size
                       else self.initial_value, self.initial_value)
        return float(out) if out.ndim == 0 else out

    @property
    def jumps(self):
        """Jump sizes f(t) - f(t-) at each breakpoint."""
        prev = np.concatenate(([self.initial_value], self.values[:-1]))
        return self.values - prev

    @property
    def final_value(self):
        return float(self.values[-1]) if self.values.size else self.initial_value

    def __len__(self):
        return self.jump_times.size

    def __repr__(self):
        return (f"StepFunction(n_jumps={self.jump_times.size}, "
                f"initial_value={self.initial_value!r})")

    # algebra ----------------------------------------------------------------
    def combine(self, other, op):
        """Pointwise ``op(self, other)`` on the union of breakpoints."""
        if not isinstance(other, StepFunction):
            c = float(other)
            return StepFunction(self.jump_times, op(self.values, c),
                                op(self.initial_value, c))
        grid = np.union1d(self.jump_times, other.jump_times)
        return StepFunction(grid, op(self(grid), other(grid)),
                            op(self.initial_value, other.initial_value))

    def __add__(self, other):
        return self.combine(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self.combine(other, np.subtract)

    def __mul__(self, other):
        return self.combine(other, np.multiply)

    __rmul__ = __mul__

    def map(self, fn):
        return StepFunction(self.jump_times, fn(self.values), fn(self.initial_value))

    def truncate(self, t):
        """Drop breakpoints after ``t`` (the function is held constant beyond)."""
        keep = self.jump_times <= t
        return StepFunction(self.jump_times[keep], self.values[keep], self.initial_value)

    def compress(self):
        """Remove zero-size jumps."""
        nz = self.jumps != 0
        return StepFunction(self.jump_times[nz], self.values[nz], self.initial_value)


def stieltjes_integral(g, f, a, b):
    """Sum of ``g(u) * Δf(u)`` over jump times ``u`` of ``f`` in ``(a, b]``.

    ``g`` is either a constant or a vectorised callable.
    """
    if b < a:
        raise ValueError("window must satisfy a <= b")
    jt = f.jump_times
    mask = (jt > a) & (jt <= b)
    if not mask.any():
        return 0.0
    u = jt[mask]
    dv = f.jumps[mask]
    gu = g(u) if callable(g) else g
    return float(np.sum(np.broadcast_to(np.asarray(gu, dtype=float), u.shape) * dv))


def discount_weights(starts, ends, r):
    """Exact ``∫_a^b e^{-rt} dt`` for arrays of interval endpoints."""
    starts = np.asarray(starts, dtype=float)
    ends = np.asarray(ends, dtype=float)
    if r == 0:
        return ends - starts
    return -np.exp(-r * starts) * np.expm1(-r * (ends - starts)) / r


def discounted_lebesgue_integral(f, r, tau, start=0.0):
    """Exact ``∫_{(start, tau]} e^{-rt} f(t) dt`` for a step function ``f``."""
    if r < 0:
        raise ValueError("discount rate must be nonnegative")
    if tau <= start:
        return 0.0
    jt = f.jump_times
    inner = jt[(jt > start) & (jt < tau)]
    knots = np.concatenate(([start], inner, [tau]))
    lo, hi = knots[:-1], knots[1:]
    vals = np.asarray(f(lo), dtype=float)
    nz = vals != 0
    if not nz.any():
        return 0.0
    return float(np.sum(vals[nz] * discount_weights(lo[nz], hi[nz], r)))


def cumulative_discounted_integral(f, r, query, start=0.0):
    """``∫_{(start, q]} e^{-rt} f(t) dt`` evaluated at each query point."""
    q = np.asarray(query, dtype=float)
    jt = f.jump_times
    knots = np.concatenate(([start], jt[jt > start]))
    vals = np.asarray(f(knots), dtype=float)
    seg = np.zeros(knots.size)
    if knots.size > 1:
        w = discount_weights(knots[:-1], knots[1:], r)
        seg[1:] = np.cumsum(np.where(vals[:-1] != 0, vals[:-1] * w, 0.0))
    qc = np.maximum(q, start)
    k = np.searchsorted(knots, qc, side="right") - 1
    tail = discount_weights(knots[k], qc, r)
    out = seg[k] + np.where(vals[k] != 0, vals[k] * tail, 0.0)
    return float(out) if out.ndim == 0 else out
