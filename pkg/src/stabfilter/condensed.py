"""Condensed (state-eliminated) prediction model.

Stacking the predicted states x_1..x_N of a linear plant gives
X = Phi x_0 + Gamma z with z = (u_0, ..., u_{N-1}). Every quadratic in the
filter problems is built from these two matrices, which only depend on the
plant and the horizon and are therefore computed once.
"""

from __future__ import annotations

import numpy as np

from .costs import StabilityCost
from .model import BoxConstraints, LinearDynamics, ReferenceWindow


class Prediction:
    def __init__(self, dyn: LinearDynamics, N: int):
        if N < 1:
            raise ValueError("horizon must be at least 1")
        n, m = dyn.n, dyn.m
        self.dyn, self.N, self.n, self.m = dyn, N, n, m
        Phi = np.empty((N, n, n))
        Gamma = np.zeros((N, n, N * m))
        Ai = np.eye(n)
        for i in range(N):
            Ai = dyn.A @ Ai
            Phi[i] = Ai
        # x_{i+1} = A x_i + B u_i
        for i in range(N):
            if i:
                Gamma[i] = dyn.A @ Gamma[i - 1]
            Gamma[i][:, i * m : (i + 1) * m] = dyn.B
        self.Phi = Phi
        self.Gamma = Gamma
        self._cost_cache: dict[int, tuple] = {}

    @property
    def d(self) -> int:
        return self.N * self.m

    def states(self, x0, z) -> np.ndarray:
        """x_0..x_N as an (N+1, n) array."""
        xs = np.empty((self.N + 1, self.n))
        xs[0] = x0
        xs[1:] = self.Phi @ x0 + self.Gamma @ z
        return xs

    def _cost_blocks(self, cost: StabilityCost):
        key = id(cost)
        hit = self._cost_cache.get(key)
        if hit is not None and hit[0] is cost:
            return hit[1:]
        N, n, m = self.N, self.n, self.m
        G = self.Gamma.reshape(N * n, N * m)
        W = np.zeros((N * n, N * n))
        for i in range(N - 1):
            W[i * n : (i + 1) * n, i * n : (i + 1) * n] = cost.Q
        W[(N - 1) * n :, (N - 1) * n :] = cost.P
        Rb = np.kron(np.eye(N), cost.R)
        GtW = G.T @ W
        Hq = GtW @ G + Rb
        Hq = 0.5 * (Hq + Hq.T)
        self._cost_cache[key] = (cost, W, Rb, GtW, Hq)
        return W, Rb, GtW, Hq

    def cost_quadratic(self, cost: StabilityCost, x0, r: ReferenceWindow | None = None):
        """(M, q, s) with J(x0, z) = 1/2 z'Mz + q'z + s."""
        W, Rb, GtW, Hq = self._cost_blocks(cost)
        x0 = np.asarray(x0, dtype=float)
        if r is None:
            r = ReferenceWindow.zeros(self.N, self.n, self.m)
        dvec = (self.Phi @ x0 - r.x[1:]).reshape(-1)
        ur = r.u[: self.N].reshape(-1)
        e0 = x0 - r.x[0]
        M = 2.0 * Hq
        q = 2.0 * (GtW @ dvec - Rb @ ur)
        s = float(dvec @ W @ dvec + ur @ Rb @ ur + e0 @ cost.Q @ e0)
        return M, q, s

    def terminal_quadratic(self, P, tau: float, x0, x_ref_N=None):
        """(M, q, s) of (x_N - x^r_N)' P (x_N - x^r_N) - tau <= 0."""
        GN = self.Gamma[-1]
        off = self.Phi[-1] @ x0
        if x_ref_N is not None:
            off = off - x_ref_N
        PG = P @ GN
        M = 2.0 * GN.T @ PG
        M = 0.5 * (M + M.T)
        q = 2.0 * PG.T @ off
        s = float(off @ P @ off) - tau
        return M, q, s

    def state_rows(self, box: BoxConstraints, x0):
        """Linear rows C z <= c for x_1..x_{N-1} in the state box.

        The fixed state x_0 contributes zero rows, which make the problem
        infeasible exactly when x_0 lies outside the box.
        """
        rows, rhs = [], []
        d = self.d
        x0 = np.asarray(x0, dtype=float)
        for j in range(self.n):
            for bound, sign in ((box.x_hi[j], 1.0), (box.x_lo[j], -1.0)):
                if np.isfinite(bound):
                    rows.append(np.zeros(d))
                    rhs.append(sign * (bound - x0[j]))
        for i in range(self.N - 1):
            Gi, off = self.Gamma[i], self.Phi[i] @ x0
            for j in range(self.n):
                if np.isfinite(box.x_hi[j]):
                    rows.append(Gi[j]); rhs.append(box.x_hi[j] - off[j])
                if np.isfinite(box.x_lo[j]):
                    rows.append(-Gi[j]); rhs.append(off[j] - box.x_lo[j])
        if not rows:
            return np.zeros((0, d)), np.zeros(0)
        return np.array(rows), np.array(rhs)

    def terminal_equality(self, x0, x_ref_N):
        """E z = e for x_N = x^r_N (degenerate terminal set)."""
        return self.Gamma[-1].copy(), np.asarray(x_ref_N, dtype=float) - self.Phi[-1] @ x0
