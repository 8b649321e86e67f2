"""Lane-change driver-assistance scenario on a linearized single-track model.

States (z1, z2, psi, v, beta, psi_dot): longitudinal and lateral position,
heading, speed, side-slip angle and yaw rate. Inputs (delta, a): steering
angle and longitudinal acceleration. The model is linearized at 10 m/s
straight driving; z1 is measured in a frame moving at that speed, so the
constant drift of the linearization point drops out.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .costs import StabilityCost
from .filter import FilterConfig, Mode
from .model import BoxConstraints, LinearDynamics, ReferenceTrajectory, error_box
from .sim import Composite, DestabilizingFeedback, ReferenceFeedforward, Scenario
from .terminal import TerminalIngredients, solve_riccati, terminal_set_level

DEG = np.pi / 180.0
TS = 0.02
HORIZON = 30
ZETA_MIN = 0.1
ONSET_STEP = 250
RUN_STEPS = 500
# driver model: error-proportional noise before onset, then reversed
# feedback with a small steering bias
DRIVER_NOISE = 0.2
DRIVER_BIAS = np.array([0.02, 0.0])
X0 = np.array([0.0, -0.5, 0.0, 0.0, 0.0, 0.0])
X_HI = np.array([1.0, 1.0, 30 * DEG, 10 / 3.6, 5 * DEG, 35 * DEG])
U_LO = np.array([-35 * DEG, -7.0])
U_HI = np.array([35 * DEG, 2.0])


@dataclass(frozen=True)
class SingleTrackParams:
    """Physical parameters and linearization speed.

    Defaults describe a mid-size passenger car: mass, inertia and axle
    distances of the CommonRoad vehicle 1, with cornering stiffnesses
    mu * C_S * F_z from its normalized tire coefficients and static axle loads.
    """

    mass: float = 1093.3
    yaw_inertia: float = 1791.6
    l_front: float = 1.156
    l_rear: float = 1.422
    c_front: float = 129_602.0
    c_rear: float = 100_333.0
    v_lin: float = 10.0

    def __post_init__(self):
        for name in ("mass", "yaw_inertia", "l_front", "l_rear", "c_front", "c_rear"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.v_lin == 0:
            raise ValueError("linearization speed must be nonzero")

    @property
    def x_lin(self) -> np.ndarray:
        return np.array([0.0, 0.0, 0.0, self.v_lin, 0.0, 0.0])


def single_track_rhs(p: SingleTrackParams, x, u) -> np.ndarray:
    """Nonlinear single-track dynamics with linear tires (absolute z1)."""
    _, _, psi, v, beta, r = x
    delta, a = u
    alpha_f = delta - beta - p.l_front * r / v
    alpha_r = -beta + p.l_rear * r / v
    Fy_f = p.c_front * alpha_f
    Fy_r = p.c_rear * alpha_r
    return np.array([
        v * np.cos(psi + beta),
        v * np.sin(psi + beta),
        r,
        a,
        (Fy_f + Fy_r) / (p.mass * v) - r,
        (p.l_front * Fy_f - p.l_rear * Fy_r) / p.yaw_inertia,
    ])


def linearize_single_track(p: SingleTrackParams) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians (A_c, B_c) of :func:`single_track_rhs` at straight driving."""
    m, Iz, lf, lr, cf, cr, v = p.mass, p.yaw_inertia, p.l_front, p.l_rear, p.c_front, p.c_rear, p.v_lin
    A = np.zeros((6, 6))
    A[0, 3] = 1.0
    A[1, 2] = v
    A[1, 4] = v
    A[2, 5] = 1.0
    A[4, 4] = -(cf + cr) / (m * v)
    A[4, 5] = (cr * lr - cf * lf) / (m * v * v) - 1.0
    A[5, 4] = (cr * lr - cf * lf) / Iz
    A[5, 5] = -(cf * lf**2 + cr * lr**2) / (Iz * v)
    B = np.zeros((6, 2))
    B[3, 1] = 1.0
    B[4, 0] = cf / (m * v)
    B[5, 0] = cf * lf / Iz
    return A, B


def discretize_zoh(A_c, B_c, Ts: float) -> LinearDynamics:
    """Zero-order-hold discretization from the exponential of [[A, B], [0, 0]] Ts."""
    if not Ts > 0:
        raise ValueError("sampling time must be positive")
    A_c = np.atleast_2d(np.asarray(A_c, dtype=float))
    B_c = np.asarray(B_c, dtype=float).reshape(A_c.shape[0], -1)
    n, m = B_c.shape
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = A_c
    aug[:n, n:] = B_c
    E = scipy.linalg.expm(aug * Ts)
    return LinearDynamics(E[:n, :n], E[:n, n:])


# ----------------------------------------------------------------------------
# Reference


def quintic_blend(t, t0: float, t1: float, y0: float, y1: float):
    """Smooth step from y0 to y1 on [t0, t1], zero slope and curvature at both ends."""
    s = np.clip((np.asarray(t, dtype=float) - t0) / (t1 - t0), 0.0, 1.0)
    return y0 + (y1 - y0) * s**3 * (10 - 15 * s + 6 * s * s)


def lateral_profile(t, changes, start: float = 0.0) -> np.ndarray:
    """Piecewise quintic lateral target; ``changes`` is a list of (t0, t1, y_target)."""
    t = np.asarray(t, dtype=float)
    y = np.full_like(t, start)
    level = start
    for t0, t1, y1 in changes:
        y = np.where(t >= t0, quintic_blend(t, t0, t1, level, y1), y)
        level = y1
    return y


# The first change is already under way at t = 0, which leaves a small but
# nonzero initial tracking error for a vehicle driving straight at z2 = -0.5.
DEFAULT_START = -0.5
DEFAULT_CHANGES = [(-0.4, 2.1, 0.5), (5.5, 8.0, -0.5)]


def lane_change_reference(
    dyn: LinearDynamics,
    steps: int,
    Ts: float = TS,
    changes=None,
    start: float = DEFAULT_START,
    lateral_weight: float = 100.0,
    tightening: float = 1.05,
) -> ReferenceTrajectory:
    """Dynamically consistent reference following a two-lane-change target.

    The target only prescribes z2. A linear-quadratic tracking law with a
    heavy weight on the lateral error turns it into state and input
    trajectories of the discrete plant, so every stored pair satisfies the
    dynamics exactly up to roundoff. Changes starting before t = 0 are
    simulated from straight driving at ``start`` and the pre-roll is cut off.
    """
    changes = DEFAULT_CHANGES if changes is None else changes
    pre = max(0, int(np.ceil(-min([c[0] for c in changes] + [0.0]) / Ts - 1e-9)))
    t = (np.arange(pre + steps + 1) - pre) * Ts
    y_d = lateral_profile(t, changes, start)
    Q = np.eye(dyn.n)
    Q[1, 1] = lateral_weight
    _, K = solve_riccati(dyn, Q, np.eye(dyn.m))
    x = np.zeros((len(t), dyn.n))
    u = np.zeros((len(t), dyn.m))
    x[0, 1] = start
    target = np.zeros(dyn.n)
    for k in range(len(t)):
        target[1] = y_d[k]
        u[k] = K @ (x[k] - target)
        if k + 1 < len(t):
            x[k + 1] = dyn.A @ x[k] + dyn.B @ u[k]
    return ReferenceTrajectory(x[pre:], u[pre:], tightening)


# ----------------------------------------------------------------------------
# Scenario


def vehicle_box() -> BoxConstraints:
    return BoxConstraints(-X_HI, X_HI, U_LO, U_HI)


def driver_policy(K, onset: int = ONSET_STEP, noise: float = DRIVER_NOISE, bias=DRIVER_BIAS) -> Composite:
    """Simulated driver: LQR-like tracking with imprecision, unstable after ``onset``."""
    K = np.asarray(K, dtype=float)
    return Composite([
        (0, ReferenceFeedforward(noise=noise, gain=K, noise_scale="error")),
        (onset, DestabilizingFeedback(gain=-K, onset=onset, bias=bias)),
    ])


def build_scenario(
    params: SingleTrackParams | None = None,
    T: int = RUN_STEPS,
    changes=None,
    terminal_margin: float = 1.0,
    onset: int = ONSET_STEP,
    noise: float = DRIVER_NOISE,
    bias=DRIVER_BIAS,
    seed: int = 0,
) -> Scenario:
    """The lane-change scenario with the tracking filter and adaptive zeta.

    The reference covers T + N + 1 steps so every prediction window exists.
    """
    params = params or SingleTrackParams()
    dyn = discretize_zoh(*linearize_single_track(params), TS)
    box = vehicle_box()
    Q, R = np.eye(6), np.eye(2)
    ref = lane_change_reference(dyn, T + HORIZON + 1, TS, changes)
    P, K = solve_riccati(dyn, Q, R)
    tau = terminal_set_level(P, K, error_box(box, ref), terminal_margin)
    cfg = FilterConfig(N=HORIZON, mode=Mode.TRACKING_CONVERGENCE, zeta_min=ZETA_MIN, rho=1.0, gamma=1.0, zeta_policy="adaptive")
    return Scenario(
        dyn, StabilityCost(Q, R, P), box, TerminalIngredients(P, K, tau), cfg,
        driver_policy(K, onset, noise, bias), X0.copy(), T, ref, seed,
        info={"params": params, "onset": onset},
    )
