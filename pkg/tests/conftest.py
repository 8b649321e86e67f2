from __future__ import annotations

import numpy as np
import pytest

from stabfilter.costs import StabilityCost
from stabfilter.model import BoxConstraints, LinearDynamics
from stabfilter.terminal import synthesize

TS = 0.2


def double_integrator(Ts: float = TS) -> LinearDynamics:
    return LinearDynamics([[1.0, Ts], [0.0, 1.0]], [[Ts * Ts / 2], [Ts]])


@pytest.fixture
def di():
    """Double integrator with its box, LQR cost and terminal ingredients."""
    dyn = double_integrator()
    box = BoxConstraints([-5.0, -2.0], [5.0, 2.0], [-1.0], [1.0])
    Q, R = np.eye(2), np.eye(1)
    ti = synthesize(dyn, Q, R, box)
    return dyn, box, StabilityCost(Q, R, ti.P), ti


@pytest.fixture
def scalar_plant():
    """x+ = 0.9 x + u with |x| <= 2, |u| <= 1."""
    dyn = LinearDynamics([[0.9]], [[1.0]])
    box = BoxConstraints([-2.0], [2.0], [-1.0], [1.0])
    Q, R = np.eye(1), np.eye(1)
    ti = synthesize(dyn, Q, R, box)
    return dyn, box, StabilityCost(Q, R, ti.P), ti


def destabilizing(x):
    return np.array([0.8 * x[0] + 0.5 * x[1]])
