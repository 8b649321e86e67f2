"""Independent reference computations used by several test files."""

from __future__ import annotations

import itertools

import numpy as np

from stabfilter.qcqp import QcqpProblem, QuadConstraint


def random_qcqp(rng: np.random.Generator, d: int | None = None) -> QcqpProblem:
    """Convex QCQP with a box, up to two quadratic rows and one linear row.

    z = 0 is strictly feasible for every row, so the problem is feasible.
    """
    d = int(rng.integers(1, 5)) if d is None else d
    A = rng.normal(size=(d, d))
    H = A @ A.T + 0.1 * np.eye(d)
    g = rng.normal(scale=3.0, size=d)
    quads = []
    for j in range(int(rng.integers(0, 3))):
        B = rng.normal(size=(d, d))
        quads.append(QuadConstraint(B @ B.T + 0.05 * np.eye(d), rng.normal(size=d), -rng.uniform(0.2, 1.5), f"q{j}"))
    C = c = None
    if rng.random() < 0.5:
        C = rng.normal(size=(1, d))
        c = np.array([rng.uniform(0.1, 1.0)])
    w = rng.uniform(0.5, 2.0)
    return QcqpProblem(H, g, float(rng.normal()), lo=np.full(d, -w), hi=np.full(d, w), C=C, c=c, quads=quads)


def _values(p: QcqpProblem, Z: np.ndarray):
    """Objective and feasibility of each row of Z (no equalities)."""
    f = 0.5 * np.einsum("ij,jk,ik->i", Z, p.H, Z) + Z @ p.g + p.c0
    ok = np.all((Z >= p.lo) & (Z <= p.hi), axis=1)
    if p.C.shape[0]:
        ok &= np.all(Z @ p.C.T <= p.c, axis=1)
    for qc in p.quads:
        ok &= 0.5 * np.einsum("ij,jk,ik->i", Z, qc.M, Z) + Z @ qc.q + qc.s <= 0
    return np.where(ok, f, np.inf)


def grid_oracle(p: QcqpProblem, points: int = 9, shrink: float = 0.7, width: float = 1e-11,
                max_levels: int = 3000, start=None) -> tuple[float, np.ndarray]:
    """Best feasible grid value, zooming the grid onto the incumbent.

    Only feasible grid points count, so the value is an upper bound on the
    optimum. ``start`` = (value, point) restarts the zoom from an earlier
    incumbent with a fresh window. Each level re-centers a grid on the incumbent and aligns its axes
    with the spread of the best feasible points of the previous level. Near an
    optimum where curved rows meet, the improving feasible set is a thin
    wedge, and an axis-aligned grid would miss it.
    """
    d = p.d
    n0 = {1: 2001, 2: 201, 3: 51, 4: 25}[d]
    if start is None:
        Z = np.array(list(itertools.product(*[np.linspace(p.lo[i], p.hi[i], n0) for i in range(d)])))
        v = _values(p, Z)
        i = int(np.argmin(v))
        if not np.isfinite(v[i]):
            raise ValueError("no feasible grid point")
        best, zb = float(v[i]), Z[i].copy()
    else:
        best, zb = float(start[0]), np.array(start[1], dtype=float)
    frame = np.eye(d)
    radius = 2 * (p.hi - p.lo) / (n0 - 1)
    unit = np.array(list(itertools.product(*[np.linspace(-1.0, 1.0, points)] * d)))
    for _ in range(max_levels):
        if radius.max() < width:
            return best, zb
        Z = zb + (unit * radius) @ frame.T
        v = _values(p, Z)
        i = int(np.argmin(v))
        if v[i] < best:
            edge = np.abs(unit[i]) >= 1.0
            radius = np.where(edge, radius / shrink, radius)
            best, zb = float(v[i]), Z[i].copy()
        else:
            radius = shrink * radius
        # principal axes of the best feasible points seen at this level
        ok = np.isfinite(v)
        if ok.sum() > d:
            sel = Z[ok][np.argsort(v[ok])[: max(4 * d, points)]] - zb
            w, U = np.linalg.eigh(sel.T @ sel / len(sel))
            spread = np.sqrt(np.maximum(w, 0.0))
            if spread.max() > 0:
                r = radius.max()
                frame = U
                radius = np.maximum(2 * spread, 0.05 * r)
                radius = radius * (r / radius.max())
    return best, zb


GRIDS = [(7, 0.8), (9, 0.7), (9, 0.85), (11, 0.8), (13, 0.9), (9, 0.9), (11, 0.95)]


def self_consistent_grid(p: QcqpProblem, rtol: float = 1e-6) -> float:
    """Grid optimum, restarting the zoom with new settings until it stops improving."""
    best = grid_oracle(p, *GRIDS[0])
    for points, shrink in GRIDS[1:]:
        nxt = grid_oracle(p, points, shrink, start=best)
        gain = best[0] - nxt[0]
        best = min(best, nxt, key=lambda t: t[0])
        if gain <= rtol * max(1.0, abs(best[0])):
            return best[0]
    raise AssertionError(f"grid oracle still improving by {gain:.3e}")
