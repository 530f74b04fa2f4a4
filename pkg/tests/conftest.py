import math

import numpy as np
import pytest

from transcost.event_history import StateSpace, build_event_history


def two_state_histories(times, censor=None, costs=None, tau=10.0, covariates=None):
    """Alive/dead histories; ``times[i] = inf`` means no observed death."""
    ss = StateSpace.two_state()
    censor = [math.inf] * len(times) if censor is None else censor
    costs = [0.0] * len(times) if costs is None else costs
    out = []
    for i, (t, u, c) in enumerate(zip(times, censor, costs)):
        rows = [(t, 0, 1, c)] if t <= min(u, tau) else []
        cov = None if covariates is None else {k: v[i] for k, v in covariates.items()}
        out.append(build_event_history(rows, ss, tau, subject_id=i, censor_time=u,
                                       covariates=cov))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def hand_three():
    """(T=1, y=100), (T=2, y=300), censored at 1.5."""
    t = np.array([1.0, 2.0, np.inf])
    u = np.array([np.inf, np.inf, 1.5])
    y = np.array([100.0, 300.0, np.nan])
    return t, u, y
