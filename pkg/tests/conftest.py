"""Shared fixtures: scenario configs and pre-computed simulation batches.

The closed-loop batches are session-scoped because the multi-obstacle runs
take tens of seconds; every test reads from the same records.
"""

from __future__ import annotations

import numpy as np
import pytest

from nclbf import builtin_scenario, simulate


@pytest.fixture(scope="session")
def cfg_a():
    return builtin_scenario("linear2d_single")


@pytest.fixture(scope="session")
def cfg_b():
    return builtin_scenario("nonlinear_mech_three")


# the five published starts plus the three below-band starts
EXTRA_A_STARTS = ((0.2, 0.8), (0.55, 0.55), (0.8, 0.2))


@pytest.fixture(scope="session")
def records_a(cfg_a):
    """x0 -> TrajectoryRecord for the eight single-obstacle starts."""
    starts = [tuple(map(float, x)) for x in cfg_a.initial_states] + list(EXTRA_A_STARTS)
    return {x0: simulate(cfg_a, np.array(x0)) for x0 in starts}


@pytest.fixture(scope="session")
def records_b(cfg_b):
    """x0 -> TrajectoryRecord for the eight multi-obstacle starts (t_max=60)."""
    return {tuple(map(float, x0)): simulate(cfg_b, np.asarray(x0))
            for x0 in cfg_b.initial_states}


def max_v_step_increase(record, eps_conv: float) -> float:
    vs = [s.V for s in record.samples]
    steps = [b - a for s, (a, b) in zip(record.samples, zip(vs, vs[1:]))
             if float(s.x @ s.x) > eps_conv ** 2]
    return max(steps) if steps else float("-inf")


def worst_clearance(record) -> float:
    return min(float(np.min(s.min_dist)) for s in record.samples)
