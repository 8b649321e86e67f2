"""Terminal ingredients: LQR terminal cost and feedback, ellipsoidal terminal set."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .costs import StabilityCost
from .model import BoxConstraints, LinearDynamics

RICCATI_TOL = 1e-8
CLF_TOL = 1e-8
INVARIANCE_TOL = 1e-9


class RiccatiError(RuntimeError):
    pass


class TerminalSetError(ValueError):
    pass


@dataclass(frozen=True)
class TerminalIngredients:
    """Terminal weight P, feedback K (u = K x) and level tau of {x' P x <= tau}.

    ``tau == 0`` encodes the degenerate design x_N = x^r_N with V_f = 0 and
    kappa_f = u^r; P and K are then unused.
    """

    P: np.ndarray
    K: np.ndarray
    tau: float

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        K = np.atleast_2d(np.asarray(self.K, dtype=float))
        if P.shape[0] != P.shape[1] or K.shape[1] != P.shape[0]:
            raise ValueError(f"incompatible shapes P {P.shape}, K {K.shape}")
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")
        P.flags.writeable = False
        K.flags.writeable = False
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "tau", float(self.tau))

    @property
    def degenerate(self) -> bool:
        return self.tau == 0.0

    @classmethod
    def degenerate_for(cls, n: int, m: int) -> "TerminalIngredients":
        return cls(np.zeros((n, n)), np.zeros((m, n)), 0.0)

    def contains(self, x, x_ref=None, tol: float = 0.0) -> bool:
        e = np.asarray(x, dtype=float)
        if x_ref is not None:
            e = e - np.asarray(x_ref, dtype=float)
        if self.degenerate:
            return bool(np.linalg.norm(e) <= tol)
        return float(e @ self.P @ e) <= self.tau * (1.0 + tol)


def dare_residual(A, B, Q, R, P) -> np.ndarray:
    BtPA = B.T @ P @ A
    return A.T @ P @ A - P - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA) + Q


def lqr_gain(A, B, R, P) -> np.ndarray:
    """K = -(R + B'PB)^-1 B'PA, so that u = K x."""
    return -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)


def solve_riccati(dyn: LinearDynamics, Q, R, max_iter: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Stabilizing solution of the discrete algebraic Riccati equation.

    Uses the structured doubling algorithm (quadratically convergent), followed
    by a few fixed-point sweeps to clean up the last digits.

    Returns:
        (P, K) with K the associated LQR feedback u = K x.

    Raises:
        RiccatiError: no convergence within ``max_iter`` or an indefinite or
            non-stabilizing iterate.
    """
    A, B = dyn.A, dyn.B
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    n = A.shape[0]
    I = np.eye(n)
    Ak = A.copy()
    Gk = B @ np.linalg.solve(R, B.T)
    Hk = Q.copy()
    for _ in range(max_iter):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                W = np.linalg.solve(I + Gk @ Hk, np.hstack([Ak, Gk]))
        except np.linalg.LinAlgError as exc:
            raise RiccatiError(f"doubling iteration broke down: {exc}") from None
        WA, WG = W[:, :n], W[:, n:]
        with np.errstate(over="ignore", invalid="ignore"):
            H_next = Hk + Ak.T @ Hk @ WA
            G_next = Gk + Ak @ WG @ Ak.T
            A_next = Ak @ WA
        H_next = 0.5 * (H_next + H_next.T)
        G_next = 0.5 * (G_next + G_next.T)
        if not (np.all(np.isfinite(H_next)) and np.all(np.isfinite(A_next))):
            raise RiccatiError("doubling iteration diverged")
        done = np.linalg.norm(H_next - Hk) <= 1e-15 * max(1.0, np.linalg.norm(H_next))
        Ak, Gk, Hk = A_next, G_next, H_next
        if done:
            break
    else:
        raise RiccatiError(f"no convergence after {max_iter} doubling steps")

    P = Hk
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(3):
                P = Q + A.T @ P @ A - (A.T @ P @ B) @ np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
                P = 0.5 * (P + P.T)
    except np.linalg.LinAlgError:
        P = np.full_like(Q, np.nan)
    if not np.all(np.isfinite(P)):
        raise RiccatiError("Riccati iterate is not finite; (A, B) not stabilizable?")

    if np.linalg.eigvalsh(P).min() <= 0:
        raise RiccatiError("Riccati solution is not positive definite")
    res = np.linalg.norm(dare_residual(A, B, Q, R, P))
    if res > RICCATI_TOL * np.linalg.norm(P):
        raise RiccatiError(f"Riccati residual {res:.3e} above tolerance")
    K = lqr_gain(A, B, R, P)
    if np.max(np.abs(np.linalg.eigvals(A + B @ K))) >= 1.0:
        raise RiccatiError("closed loop A + BK is not Schur stable; (A, B) not stabilizable?")
    return P, K


def terminal_set_level(P, K, box: BoxConstraints, margin: float = 1.0) -> float:
    """Largest tau such that {x' P x <= tau} fits in the state box and K x in the input box.

    For a halfspace h' x <= b the ellipsoid fits iff tau <= b^2 / (h' P^-1 h).
    """
    if not 0.0 < margin <= 1.0:
        raise ValueError("margin must lie in (0, 1]")
    P = np.asarray(P, dtype=float)
    K = np.atleast_2d(np.asarray(K, dtype=float))
    Pinv = np.linalg.inv(P)
    n = P.shape[0]
    rows, bounds = [], []
    I = np.eye(n)
    for i in range(n):
        rows += [I[i], -I[i]]
        bounds += [box.x_hi[i], -box.x_lo[i]]
    for j in range(K.shape[0]):
        rows += [K[j], -K[j]]
        bounds += [box.u_hi[j], -box.u_lo[j]]
    tau = np.inf
    for h, b in zip(rows, bounds):
        if not np.isfinite(b):
            continue
        if b <= 0:
            raise TerminalSetError("origin is not in the interior of the constraint set")
        s = float(h @ Pinv @ h)
        if s > 0:
            tau = min(tau, b * b / s)
    if not np.isfinite(tau):
        raise TerminalSetError("constraints do not bound the terminal set")
    return margin * tau


def terminal_controller(ti: TerminalIngredients, x, r=None) -> np.ndarray:
    """kappa_f(x, r) = u^r + K (x - x^r); plain K x without a reference."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != ti.K.shape[1]:
        raise ValueError("state dimension mismatch")
    if r is None:
        return ti.K @ x
    return np.asarray(r[1], dtype=float) + ti.K @ (x - np.asarray(r[0], dtype=float))


def terminal_rollout(ti: TerminalIngredients, dyn: LinearDynamics, x, N: int, r_window=None) -> np.ndarray:
    """Inputs of the terminal controller applied for N steps from x (shape (N, m))."""
    u = np.empty((N, dyn.m))
    x = np.asarray(x, dtype=float).copy()
    for i in range(N):
        r = None if r_window is None else (r_window.x[i], r_window.u[i])
        u[i] = terminal_controller(ti, x, r)
        x = dyn.A @ x + dyn.B @ u[i]
    return u


@dataclass
class Certificate:
    clf_max_eig: float
    invariance_max_ratio: float
    admissibility_max_violation: float
    schur_radius: float
    samples: int
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def lines(self) -> list[str]:
        flag = lambda ok: "PASS" if ok else "FAIL"  # noqa: E731
        return [
            f"{flag(self.schur_radius < 1)} schur_stable spectral_radius={self.schur_radius:.6e}",
            f"{flag(self.clf_max_eig <= CLF_TOL)} clf_decrease max_eig={self.clf_max_eig:.6e} tol={CLF_TOL:g}",
            f"{flag(self.invariance_max_ratio <= 1 + INVARIANCE_TOL)} invariance "
            f"max(V_f(x+)/tau)={self.invariance_max_ratio:.12f} samples={self.samples}",
            f"{flag(self.admissibility_max_violation <= 0)} admissibility "
            f"max_violation={self.admissibility_max_violation:.6e}",
        ]

    def __str__(self) -> str:
        return "\n".join(self.lines())


def clf_residual(dyn: LinearDynamics, cost: StabilityCost, ti: TerminalIngredients) -> np.ndarray:
    Acl = dyn.A + dyn.B @ ti.K
    return Acl.T @ ti.P @ Acl - ti.P + cost.Q + ti.K.T @ cost.R @ ti.K


def certify_assumption5(
    dyn: LinearDynamics,
    cost: StabilityCost,
    ti: TerminalIngredients,
    box: BoxConstraints | None = None,
    samples: int = 1000,
    seed: int = 0,
) -> Certificate:
    """Check CLF decrease, invariance and admissibility of the terminal set.

    ``box`` bounds the (tracking-error) state and input; the invariance and
    admissibility checks run on ``samples`` random points of the boundary
    x' P x = tau.
    """
    Acl = dyn.A + dyn.B @ ti.K
    rho = float(np.max(np.abs(np.linalg.eigvals(Acl))))
    R_clf = clf_residual(dyn, cost, ti)
    clf_max = float(np.linalg.eigvalsh(0.5 * (R_clf + R_clf.T)).max())

    rng = np.random.default_rng(seed)
    w = rng.standard_normal((samples, dyn.n))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    # x = sqrt(tau) L^-T w with P = L L'  =>  x' P x = tau
    L = np.linalg.cholesky(ti.P)
    xs = np.sqrt(ti.tau) * np.linalg.solve(L.T, w.T).T
    xp = xs @ Acl.T
    ratio = np.einsum("ij,jk,ik->i", xp, ti.P, xp) / ti.tau
    inv_max = float(ratio.max())

    viol = 0.0
    if box is not None:
        us = xs @ ti.K.T
        viol = max(
            float(np.max(xs - box.x_hi)),
            float(np.max(box.x_lo - xs)),
            float(np.max(us - box.u_hi)),
            float(np.max(box.u_lo - us)),
        )
        viol = max(viol, 0.0)

    cert = Certificate(clf_max, inv_max, viol, rho, samples)
    if rho >= 1:
        cert.failures.append("schur")
    if clf_max > CLF_TOL:
        cert.failures.append("clf")
    if inv_max > 1 + INVARIANCE_TOL:
        cert.failures.append("invariance")
    if viol > 0:
        cert.failures.append("admissibility")
    return cert


def synthesize(dyn: LinearDynamics, Q, R, box: BoxConstraints, margin: float = 1.0) -> TerminalIngredients:
    P, K = solve_riccati(dyn, Q, R)
    return TerminalIngredients(P, K, terminal_set_level(P, K, box, margin))


def save_ingredients(ti: TerminalIngredients, path) -> None:
    """Write P, K and tau as labelled CSV matrix blocks."""
    with open(path, "w") as fh:
        for name, mat in (("P", ti.P), ("K", ti.K), ("tau", np.array([[ti.tau]]))):
            fh.write(f"# {name} {mat.shape[0]}x{mat.shape[1]}\n")
            for row in mat:
                fh.write(",".join(f"{v:.16e}" for v in row) + "\n")


def load_ingredients(path) -> TerminalIngredients:
    blocks: dict[str, list[list[float]]] = {}
    current = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                current = line[1:].split()[0]
                blocks[current] = []
            else:
                blocks[current].append([float(v) for v in line.split(",")])
    return TerminalIngredients(np.array(blocks["P"]), np.array(blocks["K"]), blocks["tau"][0][0])
