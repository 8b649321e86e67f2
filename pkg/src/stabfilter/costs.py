"""Quadratic stage and terminal costs, the stability cost J and the matching objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LinearDynamics, ReferenceWindow, rollout_open_loop

SYMMETRY_TOL = 1e-12
PD_TOL = 1e-10


def _check_weight(W, name: str, allow_zero: bool = False) -> np.ndarray:
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if W.shape[0] != W.shape[1]:
        raise ValueError(f"{name} must be square, got {W.shape}")
    if np.max(np.abs(W - W.T), initial=0.0) > SYMMETRY_TOL * max(1.0, np.abs(W).max()):
        raise ValueError(f"{name} is not symmetric")
    W = 0.5 * (W + W.T)
    lam_min = np.linalg.eigvalsh(W).min()
    if allow_zero and not np.any(W):
        pass
    elif lam_min <= PD_TOL:
        raise ValueError(f"{name} is not positive definite (min eigenvalue {lam_min:.3e})")
    W.flags.writeable = False
    return W


@dataclass(frozen=True)
class StabilityCost:
    """Weights of l(x,u) = |x-x^r|_Q^2 + |u-u^r|_R^2 and V_f(x) = |x-x^r|_P^2.

    ``P`` may be the zero matrix for the degenerate design without terminal
    cost; Q and R always have to be positive definite.
    """

    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        Q = _check_weight(self.Q, "Q")
        R = _check_weight(self.R, "R")
        P = _check_weight(self.P, "P", allow_zero=True)
        if P.shape != Q.shape:
            raise ValueError("P and Q must have the same shape")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "P", P)

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def m(self) -> int:
        return self.R.shape[0]

    def without_terminal(self) -> "StabilityCost":
        return StabilityCost(self.Q, self.R, np.zeros_like(self.Q))


def _quad(W: np.ndarray, v: np.ndarray) -> float:
    return float(v @ W @ v)


def stage_cost(c: StabilityCost, x, u, r=None) -> float:
    """Tracking stage cost; ``r = (x^r, u^r)`` or None for the origin."""
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if x.shape != (c.n,) or u.shape != (c.m,):
        raise ValueError("state or input dimension mismatch")
    if r is not None:
        x = x - np.asarray(r[0], dtype=float)
        u = u - np.asarray(r[1], dtype=float)
    return _quad(c.Q, x) + _quad(c.R, u)


def terminal_cost(c: StabilityCost, x, x_ref=None) -> float:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x_ref is not None:
        x = x - np.asarray(x_ref, dtype=float)
    return _quad(c.P, x)


def stability_cost_J(c: StabilityCost, dyn: LinearDynamics, x0, u_seq, r_window: ReferenceWindow | None = None) -> float:
    """Finite-horizon cost of u_seq from x0: sum of stage costs plus terminal cost.

    With ``r_window`` (length N+1) the tracking form is evaluated.
    """
    u_seq = np.asarray(u_seq, dtype=float).reshape(-1, dyn.m)
    N = u_seq.shape[0]
    if r_window is None:
        r_window = ReferenceWindow.zeros(N, dyn.n, dyn.m)
    if r_window.x.shape[0] != N + 1:
        raise ValueError(f"reference window must have length {N + 1}")
    xs = rollout_open_loop(dyn, x0, u_seq)
    ex = xs - r_window.x
    eu = u_seq - r_window.u[:N]
    total = float(np.einsum("ij,jk,ik->", ex[:N], c.Q, ex[:N]))
    total += float(np.einsum("ij,jk,ik->", eu, c.R, eu))
    return total + _quad(c.P, ex[N])


def matching_objective_G(u_des, u0) -> float:
    """Squared distance between the desired input and the first planned input."""
    u_des = np.asarray(u_des, dtype=float).reshape(-1)
    u0 = np.asarray(u0, dtype=float).reshape(-1)
    if u_des.shape != u0.shape:
        raise ValueError("u_des and u0 differ in dimension")
    d = u_des - u0
    return float(d @ d)
