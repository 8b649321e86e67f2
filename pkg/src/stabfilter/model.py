"""Discrete-time linear plant, box constraints and reference trajectories."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CONSISTENCY_TOL = 1e-9


def _as_matrix(a, name: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(a, dtype=float))
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def _as_vector(v, size: int, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.shape != (size,):
        raise ValueError(f"{name} must have length {size}, got {arr.shape[0]}")
    return arr


@dataclass(frozen=True)
class LinearDynamics:
    """x(k+1) = A x(k) + B u(k)."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        B = _as_matrix(B, "B")
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ValueError(f"B has {B.shape[0]} rows, expected {A.shape[0]}")
        A.flags.writeable = False
        B.flags.writeable = False
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class BoxConstraints:
    """Componentwise bounds x_lo <= x <= x_hi and u_lo <= u <= u_hi.

    The origin has to lie inside X x U and every input interval must have a
    nonempty interior. Infinite state bounds are allowed.
    """

    x_lo: np.ndarray
    x_hi: np.ndarray
    u_lo: np.ndarray
    u_hi: np.ndarray

    def __post_init__(self):
        x_lo = np.asarray(self.x_lo, dtype=float).reshape(-1)
        x_hi = np.asarray(self.x_hi, dtype=float).reshape(-1)
        u_lo = np.asarray(self.u_lo, dtype=float).reshape(-1)
        u_hi = np.asarray(self.u_hi, dtype=float).reshape(-1)
        if x_lo.shape != x_hi.shape or u_lo.shape != u_hi.shape:
            raise ValueError("lower and upper bounds differ in length")
        if np.any(x_lo > 0) or np.any(x_hi < 0):
            raise ValueError("state box must contain the origin")
        if np.any(u_lo > 0) or np.any(u_hi < 0):
            raise ValueError("input box must contain the origin")
        if np.any(u_lo >= u_hi):
            raise ValueError("input box needs u_lo < u_hi componentwise")
        if not (np.all(np.isfinite(u_lo)) and np.all(np.isfinite(u_hi))):
            raise ValueError("input box must be bounded")
        for name, arr in (("x_lo", x_lo), ("x_hi", x_hi), ("u_lo", u_lo), ("u_hi", u_hi)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.x_lo.shape[0]

    @property
    def m(self) -> int:
        return self.u_lo.shape[0]

    def contains_state(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.x_lo - tol) and np.all(x <= self.x_hi + tol))

    def contains_input(self, u, tol: float = 0.0) -> bool:
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= self.u_lo - tol) and np.all(u <= self.u_hi + tol))

    def state_violation(self, x) -> float:
        """Largest amount by which x leaves the state box (0 inside)."""
        x = np.asarray(x, dtype=float)
        return float(max(0.0, np.max(x - self.x_hi), np.max(self.x_lo - x)))

    def input_violation(self, u) -> float:
        u = np.asarray(u, dtype=float)
        return float(max(0.0, np.max(u - self.u_hi), np.max(self.u_lo - u)))


@dataclass(frozen=True)
class ReferenceWindow:
    """Slice r(k), ..., r(k+N) of a reference: rows of ``x`` and ``u``."""

    x: np.ndarray
    u: np.ndarray

    @property
    def horizon(self) -> int:
        return self.x.shape[0] - 1

    @classmethod
    def zeros(cls, N: int, n: int, m: int) -> "ReferenceWindow":
        return cls(np.zeros((N + 1, n)), np.zeros((N + 1, m)))


@dataclass(frozen=True)
class ReferenceTrajectory:
    """Stored reference pairs (x^r(k), u^r(k)) for k = 0..K_max."""

    x: np.ndarray
    u: np.ndarray
    tightening: float = 1.05

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        u = np.asarray(self.u, dtype=float)
        if u.ndim == 1:
            u = u.reshape(-1, 1)
        if x.shape[0] != u.shape[0]:
            raise ValueError("state and input references differ in length")
        if self.tightening <= 1.0:
            raise ValueError("tightening factor must exceed 1")
        x.flags.writeable = False
        u.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "u", u)

    @property
    def k_max(self) -> int:
        return self.x.shape[0] - 1

    def __len__(self) -> int:
        return self.x.shape[0]

    @classmethod
    def zeros(cls, length: int, n: int, m: int, tightening: float = 1.05):
        return cls(np.zeros((length, n)), np.zeros((length, m)), tightening)

    def point(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        return self.x[k], self.u[k]


def step(dyn: LinearDynamics, x, u) -> np.ndarray:
    x = _as_vector(x, dyn.n, "x")
    u = _as_vector(u, dyn.m, "u")
    return dyn.A @ x + dyn.B @ u


def rollout_open_loop(dyn: LinearDynamics, x0, u_seq) -> np.ndarray:
    """Predicted states x_0..x_N for the input sequence u_0..u_{N-1}.

    Returns an array of shape (N+1, n).
    """
    u_seq = np.asarray(u_seq, dtype=float)
    if u_seq.ndim == 1:
        u_seq = u_seq.reshape(-1, dyn.m)
    if u_seq.shape[0] < 1:
        raise ValueError("input sequence must have at least one element")
    if u_seq.shape[1] != dyn.m:
        raise ValueError(f"inputs must have dimension {dyn.m}")
    xs = np.empty((u_seq.shape[0] + 1, dyn.n))
    xs[0] = _as_vector(x0, dyn.n, "x0")
    for i, u in enumerate(u_seq):
        xs[i + 1] = dyn.A @ xs[i] + dyn.B @ u
    return xs


def reference_window(traj: ReferenceTrajectory, k: int, N: int) -> ReferenceWindow:
    if k < 0 or k + N > traj.k_max:
        raise IndexError(
            f"window [{k}, {k + N}] exceeds stored reference of length {len(traj)}"
        )
    return ReferenceWindow(traj.x[k : k + N + 1], traj.u[k : k + N + 1])


@dataclass
class ReferenceReport:
    """Indices at which a reference is inconsistent or not strictly admissible."""

    dynamics: list[int] = field(default_factory=list)
    state_bounds: list[int] = field(default_factory=list)
    input_bounds: list[int] = field(default_factory=list)
    max_residual: float = 0.0

    @property
    def ok(self) -> bool:
        return not (self.dynamics or self.state_bounds or self.input_bounds)

    def __str__(self) -> str:
        if self.ok:
            return f"reference valid (max dynamics residual {self.max_residual:.3e})"
        parts = []
        if self.dynamics:
            parts.append(f"dynamics residual > {CONSISTENCY_TOL:g} at {self.dynamics}")
        if self.state_bounds:
            parts.append(f"tightened state bounds violated at {self.state_bounds}")
        if self.input_bounds:
            parts.append(f"tightened input bounds violated at {self.input_bounds}")
        return "; ".join(parts)


def validate_reference(
    dyn: LinearDynamics, traj: ReferenceTrajectory, box: BoxConstraints
) -> ReferenceReport:
    """Check dynamic consistency and membership of the tightened set.

    Index k is flagged for dynamics when x^r(k) differs from the successor of
    (x^r(k-1), u^r(k-1)).
    """
    report = ReferenceReport()
    if len(traj) > 1:
        pred = traj.x[:-1] @ dyn.A.T + traj.u[:-1] @ dyn.B.T
        res = np.linalg.norm(traj.x[1:] - pred, axis=1)
        report.max_residual = float(res.max())
        report.dynamics = [int(k) + 1 for k in np.flatnonzero(res > CONSISTENCY_TOL)]
    sx = traj.tightening * traj.x
    su = traj.tightening * traj.u
    # Z^r lies in the interior, so touching a bound counts as a violation.
    bad_x = np.any((sx <= box.x_lo) | (sx >= box.x_hi), axis=1)
    bad_u = np.any((su <= box.u_lo) | (su >= box.u_hi), axis=1)
    report.state_bounds = [int(k) for k in np.flatnonzero(bad_x)]
    report.input_bounds = [int(k) for k in np.flatnonzero(bad_u)]
    return report


def error_box(box: BoxConstraints, traj: ReferenceTrajectory | None) -> BoxConstraints:
    """Bounds on the tracking error x - x^r, u - u^r valid along the whole reference."""
    if traj is None:
        return box
    return BoxConstraints(
        box.x_lo - traj.x.min(axis=0),
        box.x_hi - traj.x.max(axis=0),
        box.u_lo - traj.u.min(axis=0),
        box.u_hi - traj.u.max(axis=0),
    )


def save_reference_csv(traj: ReferenceTrajectory, path) -> None:
    n, m = traj.x.shape[1], traj.u.shape[1]
    header = ["k"] + [f"x{i + 1}" for i in range(n)] + [f"u{j + 1}" for j in range(m)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(len(traj)):
            w.writerow([k] + [f"{v:.16e}" for v in traj.x[k]] + [f"{v:.16e}" for v in traj.u[k]])


def load_reference_csv(path, tightening: float = 1.05) -> ReferenceTrajectory:
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    ucols = [i for i, h in enumerate(header) if h.startswith("u")]
    data = np.array([[float(v) for v in r] for r in body])
    order = np.argsort(data[:, 0], kind="stable")
    data = data[order]
    return ReferenceTrajectory(data[:, xcols], data[:, ucols], tightening)
