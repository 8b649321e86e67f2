"""Dense primal-dual interior-point solver for small convex QCQPs.

Problem form::

    minimize    1/2 z'Hz + g'z + c0
    subject to  E z = e
                lo <= z <= hi
                C z <= c
                1/2 z'M_j z + q_j'z + s_j <= 0      j = 1..p

Every inequality f_i(z) <= 0 gets a slack w_i >= 0 with f_i(z) + w_i = 0,
and Newton steps on the perturbed KKT conditions are taken from an arbitrary
(possibly infeasible) start with Mehrotra's predictor-corrector rule. Feasible
sets without interior need no special treatment this way.

When the iteration does not converge, a phase-I problem (minimize the
largest constraint value) decides between infeasibility, reported with the
minimal violation as certificate, and an iteration-limit stop.
"""

from __future__ import annotations

import copy
import enum
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

PSD_TOL = 1e-9
STEP_FRACTION = 0.99
DIVERGED = 1e12


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    MAX_ITERATIONS = "MaxIterations"


class QcqpError(ValueError):
    pass


@dataclass
class QuadConstraint:
    """1/2 z'Mz + q'z + s <= 0."""

    M: np.ndarray
    q: np.ndarray
    s: float
    name: str = ""

    def value(self, z) -> float:
        return float(0.5 * z @ self.M @ z + self.q @ z + self.s)


@dataclass
class QcqpProblem:
    H: np.ndarray
    g: np.ndarray
    c0: float = 0.0
    E: np.ndarray | None = None
    e: np.ndarray | None = None
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    C: np.ndarray | None = None
    c: np.ndarray | None = None
    quads: list[QuadConstraint] = field(default_factory=list)

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        d = self.H.shape[0]
        if self.H.shape != (d, d):
            raise QcqpError(f"H must be square, got {self.H.shape}")
        if np.size(self.g) != d:
            raise QcqpError(f"g has {np.size(self.g)} entries, expected {d}")
        self.g = np.asarray(self.g, dtype=float).reshape(d)
        self.c0 = float(self.c0)
        if self.E is None:
            self.E, self.e = np.zeros((0, d)), np.zeros(0)
        if self.C is None:
            self.C, self.c = np.zeros((0, d)), np.zeros(0)
        try:
            self.E = np.asarray(self.E, dtype=float).reshape(-1, d)
            self.e = np.asarray(self.e, dtype=float).reshape(self.E.shape[0])
            self.lo = np.full(d, -np.inf) if self.lo is None else np.asarray(self.lo, dtype=float).reshape(d)
            self.hi = np.full(d, np.inf) if self.hi is None else np.asarray(self.hi, dtype=float).reshape(d)
            self.C = np.asarray(self.C, dtype=float).reshape(-1, d)
            self.c = np.asarray(self.c, dtype=float).reshape(self.C.shape[0])
        except ValueError as exc:
            raise QcqpError(f"constraint block has wrong dimensions: {exc}") from None
        for qc in self.quads:
            qc.M = np.atleast_2d(np.asarray(qc.M, dtype=float))
            if qc.M.shape != (d, d) or np.size(qc.q) != d:
                raise QcqpError("quadratic constraint has wrong dimensions")
            qc.q = np.asarray(qc.q, dtype=float).reshape(d)
            qc.s = float(qc.s)

    @property
    def d(self) -> int:
        return self.H.shape[0]

    def objective(self, z) -> float:
        return float(0.5 * z @ self.H @ z + self.g @ z + self.c0)

    def validate(self) -> None:
        for name, M in [("H", self.H)] + [(f"M[{j}]", qc.M) for j, qc in enumerate(self.quads)]:
            if not np.all(np.isfinite(M)):
                raise QcqpError(f"{name} has non-finite entries")
            sym = 0.5 * (M + M.T)
            if np.abs(M - M.T).max(initial=0.0) > 1e-9 * max(1.0, np.abs(M).max(initial=0.0)):
                raise QcqpError(f"{name} is not symmetric")
            lam = np.linalg.eigvalsh(sym).min() if M.size else 0.0
            if lam < -PSD_TOL * max(1.0, np.abs(M).max()):
                raise QcqpError(f"{name} is not positive semidefinite (min eigenvalue {lam:.3e})")

    def max_violation(self, z) -> float:
        """Largest violation over all constraints (0 when feasible)."""
        v = 0.0
        if self.E.shape[0]:
            v = max(v, float(np.abs(self.E @ z - self.e).max()))
        with np.errstate(invalid="ignore"):
            v = max(v, float(np.max(np.where(np.isfinite(self.lo), self.lo - z, 0.0), initial=0.0)))
            v = max(v, float(np.max(np.where(np.isfinite(self.hi), z - self.hi, 0.0), initial=0.0)))
        if self.C.shape[0]:
            v = max(v, float((self.C @ z - self.c).max()))
        for qc in self.quads:
            v = max(v, qc.value(z))
        return v


@dataclass
class QcqpSolution:
    z: np.ndarray
    objective: float
    status: Status
    primal_residual: float
    dual_residual: float
    complementarity: float
    iterations: int = 0
    quad_multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    linear_multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    eq_multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    certificate: float = 0.0
    relaxation: float = 0.0
    phase1_used: bool = False

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


class _Compiled:
    """Normalized inequality representation f(z) <= 0 shared by both phases."""

    def __init__(self, p: QcqpProblem):
        d = p.d
        rows, rhs, src = [], [], []
        I = np.eye(d)
        for i in range(d):
            if np.isfinite(p.hi[i]):
                rows.append(I[i]); rhs.append(p.hi[i]); src.append(("hi", i))
            if np.isfinite(p.lo[i]):
                rows.append(-I[i]); rhs.append(-p.lo[i]); src.append(("lo", i))
        for i in range(p.C.shape[0]):
            nrm = np.linalg.norm(p.C[i])
            if nrm == 0.0:
                if p.c[i] < 0:
                    rows.append(np.zeros(d)); rhs.append(p.c[i]); src.append(("C", i))
                continue
            rows.append(p.C[i] / nrm); rhs.append(p.c[i] / nrm); src.append(("C", i, nrm))
        self.A = np.array(rows).reshape(-1, d)
        self.b = np.array(rhs, dtype=float)
        self.src = src
        self.M = [qc.M for qc in p.quads]
        self.q = [qc.q for qc in p.quads]
        self.s = np.array([qc.s for qc in p.quads], dtype=float)
        self.n_lin = self.A.shape[0]
        self.n_quad = len(p.quads)
        self.m = self.n_lin + self.n_quad
        if self.n_quad:
            self.Mstack = np.stack(self.M)
            self.qstack = np.stack(self.q)

    def values(self, z) -> np.ndarray:
        f = np.empty(self.m)
        f[: self.n_lin] = self.A @ z - self.b
        if self.n_quad:
            Mz = self.Mstack @ z
            f[self.n_lin :] = 0.5 * (Mz @ z) + self.qstack @ z + self.s
        return f

    def jacobian(self, z) -> np.ndarray:
        if not self.n_quad:
            return self.A
        return np.vstack([self.A, self.Mstack @ z + self.qstack])

    def quad_hessian(self, lam_quad) -> np.ndarray:
        return np.tensordot(lam_quad, self.Mstack, axes=1)


def _solve_kkt(S, E, r1, r2):
    """Solve [S E'; E 0] [dz; dnu] = [r1; r2]."""
    d = S.shape[0]
    p = E.shape[0]
    if p == 0:
        try:
            cf = scipy.linalg.cho_factor(S, check_finite=False)
            return scipy.linalg.cho_solve(cf, r1, check_finite=False), np.zeros(0)
        except np.linalg.LinAlgError:
            return np.linalg.lstsq(S, r1, rcond=None)[0], np.zeros(0)
    K = np.block([[S, E.T], [E, np.zeros((p, p))]])
    rhs = np.concatenate([r1, r2])
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            sol = scipy.linalg.solve(K, rhs, assume_a="sym", check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning):
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:d], sol[d:]


def _path_following(obj_H, obj_g, comp: _Compiled, E, e, z, tol, max_iter, mu=10.0, alpha=0.01, beta=0.5, stop=None):
    """Feasible primal-dual iterations from a strictly feasible z.

    ``stop(z)`` may end the iteration early (phase I).
    Returns (z, lam, nu, iterations, converged).
    """
    m = comp.m
    f = comp.values(z)
    lam = 1.0 / np.maximum(-f, 1e-12) if m else np.zeros(0)
    nu = np.zeros(E.shape[0])
    zero_eq = E.shape[0] == 0

    def residuals(z, lam, nu, f, Df, t):
        r_dual = obj_H @ z + obj_g
        if m:
            r_dual = r_dual + Df.T @ lam
        if not zero_eq:
            r_dual = r_dual + E.T @ nu
        r_cent = -lam * f - 1.0 / t if m else np.zeros(0)
        r_pri = E @ z - e if not zero_eq else np.zeros(0)
        return r_dual, r_cent, r_pri

    for it in range(1, max_iter + 1):
        f = comp.values(z)
        Df = comp.jacobian(z)
        eta = float(-f @ lam) if m else 0.0
        t = mu * m / eta if m and eta > 0 else 1e20
        r_dual, r_cent, r_pri = residuals(z, lam, nu, f, Df, t)
        if stop is not None and stop(z):
            return z, lam, nu, it, True
        if (np.linalg.norm(r_dual) <= tol and np.linalg.norm(r_pri) <= tol and eta <= tol):
            return z, lam, nu, it, True

        Hpd = obj_H.copy()
        if comp.n_quad:
            Hpd += comp.quad_hessian(lam[comp.n_lin :])
        if m:
            w = lam / (-f)
            S = Hpd + (Df.T * w) @ Df
            rhs1 = -r_dual - Df.T @ (r_cent / f)
        else:
            S = Hpd
            rhs1 = -r_dual
        S = 0.5 * (S + S.T)
        # E' nu is part of r_dual, so the second block is the increment of nu
        dz, dnu = _solve_kkt(S, E, rhs1, -r_pri)
        if m:
            dlam = r_cent / f + w * (Df @ dz)
        else:
            dlam = np.zeros(0)
        neg = dlam < 0
        s = 1.0
        if np.any(neg):
            s = min(1.0, float(np.min(-lam[neg] / dlam[neg])))
        s *= 0.99
        r0 = np.sqrt(r_dual @ r_dual + r_cent @ r_cent + r_pri @ r_pri)
        accepted = False
        for _ in range(60):
            z_new = z + s * dz
            f_new = comp.values(z_new)
            if m and np.max(f_new) >= 0:
                s *= beta
                continue
            lam_new = lam + s * dlam
            nu_new = nu + s * dnu
            rd, rc, rp = residuals(z_new, lam_new, nu_new, f_new, comp.jacobian(z_new) if m else None, t)
            r1 = np.sqrt(rd @ rd + rc @ rc + rp @ rp)
            if r1 <= (1 - alpha * s) * r0:
                accepted = True
                break
            s *= beta
        if not accepted:
            # numerical floor reached; keep the best iterate
            return z, lam, nu, it, False
        z, lam, nu = z_new, lam_new, nu_new
    return z, lam, nu, max_iter, False


def _equality_start(p: QcqpProblem, z: np.ndarray | None):
    d = p.d
    if z is None:
        z = np.zeros(d)
        finite = np.isfinite(p.lo) & np.isfinite(p.hi)
        z[finite] = 0.5 * (p.lo[finite] + p.hi[finite])
        only_lo = np.isfinite(p.lo) & ~np.isfinite(p.hi)
        only_hi = ~np.isfinite(p.lo) & np.isfinite(p.hi)
        z[only_lo] = p.lo[only_lo] + 1.0
        z[only_hi] = p.hi[only_hi] - 1.0
    z = np.asarray(z, dtype=float).copy()
    if p.E.shape[0]:
        r = p.E @ z - p.e
        if np.abs(r).max() > 0:
            z = z - np.linalg.lstsq(p.E, r, rcond=None)[0]
        res = float(np.abs(p.E @ z - p.e).max())
    else:
        res = 0.0
    return z, res


@dataclass
class FeasibilityResult:
    z: np.ndarray
    max_violation: float
    feasible: bool
    strictly: bool


def feasibility_phase(p: QcqpProblem, tol: float = 1e-8, max_iter: int = 100, z0=None) -> FeasibilityResult:
    """Minimize the largest inequality value s over the affine set E z = e.

    Stops early once s < -tol (strictly feasible point found). A final s above
    ``tol`` certifies infeasibility up to that tolerance.
    """
    comp = _Compiled(p)
    z, eq_res = _equality_start(p, z0)
    if eq_res > max(tol, 1e-9 * (1 + np.abs(p.e).max(initial=0.0))):
        return FeasibilityResult(z, eq_res, False, False)
    if comp.m == 0:
        return FeasibilityResult(z, 0.0, True, True)
    f = comp.values(z)
    if f.max() < -tol:
        return FeasibilityResult(z, float(f.max()), True, True)

    d = p.d
    # variables (z, s); constraints f_i(z) - s <= 0 and s >= s_floor
    s0 = float(f.max())
    # quadratic rows far from feasibility dominate the phase-I objective;
    # measuring each one relative to its starting value evens this out
    work = comp
    if comp.n_quad:
        qscale = np.maximum(1.0, np.abs(f[comp.n_lin :]))
        if np.any(qscale > 1.0):
            work = copy.copy(comp)
            work.Mstack = comp.Mstack / qscale[:, None, None]
            work.qstack = comp.qstack / qscale[:, None]
            work.s = comp.s / qscale
            s0 = float(work.values(z).max())
    s_floor = s0 - 1.0 - abs(s0)
    reg = 1e-10
    ph = _PhaseOne(work, s_floor)
    H1 = np.zeros((d + 1, d + 1))
    H1[:d, :d] = reg * np.eye(d)
    g1 = np.zeros(d + 1)
    g1[:d] = -reg * z
    g1[d] = 1.0
    E1 = np.hstack([p.E, np.zeros((p.E.shape[0], 1))])
    y = np.concatenate([z, [s0 + 1.0 + 0.1 * abs(s0)]])
    target = -max(tol, 1e-6 * max(1.0, abs(s0)))
    y, _, _, _, _ = _path_following(
        H1, g1, ph, E1, p.e, y, tol=tol * 1e-2, max_iter=max_iter,
        stop=lambda y: y[d] < target and work.values(y[:d]).max() < target,
    )
    z = y[:d]
    fmax = float(comp.values(z).max())
    # an interior thinner than the stop target counts as no interior
    return FeasibilityResult(z, fmax, fmax <= tol, fmax < target)


class _PhaseOne(_Compiled):
    """f_i(z) - s <= 0 for the original inequalities plus s_floor - s <= 0."""

    def __init__(self, comp: _Compiled, s_floor: float):
        self.base = comp
        d = comp.A.shape[1]
        self.n_lin = comp.n_lin + 1
        self.n_quad = comp.n_quad
        self.m = self.n_lin + self.n_quad
        self.A = np.vstack([np.hstack([comp.A, -np.ones((comp.n_lin, 1))]), -np.eye(1, d + 1, d)])
        self.b = np.concatenate([comp.b, [-s_floor]])
        if self.n_quad:
            Ms = np.zeros((self.n_quad, d + 1, d + 1))
            Ms[:, :d, :d] = comp.Mstack
            self.Mstack = Ms
            self.qstack = np.hstack([comp.qstack, -np.ones((self.n_quad, 1))])
            self.s = comp.s


class _Newton:
    """Factorization of the reduced KKT matrix [S E'; E 0], reused by both steps."""

    def __init__(self, S, E):
        self.d, self.p = S.shape[0], E.shape[0]
        self.chol = None
        if self.p == 0:
            try:
                self.chol = scipy.linalg.cho_factor(S, check_finite=False)
                return
            except np.linalg.LinAlgError:
                K = S
        else:
            K = np.block([[S, E.T], [E, np.zeros((self.p, self.p))]])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            self.lu = scipy.linalg.lu_factor(K, check_finite=False)

    def solve(self, r1, r2):
        if self.chol is not None:
            return scipy.linalg.cho_solve(self.chol, r1, check_finite=False), np.zeros(0)
        sol = scipy.linalg.lu_solve(self.lu, np.concatenate([r1, r2]), check_finite=False)
        return sol[: self.d], sol[self.d :]


def _max_step(v, dv) -> float:
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, float(np.min(-v[neg] / dv[neg])))


def _mehrotra(p: QcqpProblem, comp: _Compiled, z, tol: float, max_iter: int):
    """Infeasible-start predictor-corrector iterations.

    Returns (z, lam, nu, iterations, converged).
    """
    m, d = comp.m, p.d
    E, e = p.E, p.e
    f = comp.values(z) if m else np.zeros(0)
    w = np.maximum(-f, 1.0)
    lam = np.ones(m)
    nu = np.zeros(E.shape[0])
    for it in range(1, max_iter + 1):
        f = comp.values(z) if m else np.zeros(0)
        Df = comp.jacobian(z) if m else np.zeros((0, d))
        r_d = p.H @ z + p.g + Df.T @ lam + E.T @ nu
        r_p = f + w
        r_e = E @ z - e
        mu = float(w @ lam) / m if m else 0.0
        viol = float(np.max(f, initial=0.0))
        if (np.linalg.norm(r_d) <= tol and viol <= tol and float(np.abs(r_e).max(initial=0.0)) <= tol
                and mu * m <= tol and float(np.abs(lam * f).max(initial=0.0)) <= tol):
            return z, lam, nu, it, True
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(lam))) or np.max(lam, initial=0.0) > DIVERGED:
            break

        Hl = p.H + comp.quad_hessian(lam[comp.n_lin :]) if comp.n_quad else p.H
        D = lam / w
        S = Hl + (Df.T * D) @ Df
        S = 0.5 * (S + S.T)
        try:
            newton = _Newton(S, E)
        except (np.linalg.LinAlgError, ValueError):
            break

        def direction(r_c):
            t = (-r_c + lam * r_p) / w
            dz, dnu = newton.solve(-r_d - Df.T @ t, -r_e)
            dlam = t + D * (Df @ dz)
            dw = -r_p - Df @ dz
            return dz, dw, dlam, dnu

        # a singular factor shows up as non-finite directions; stop and let the caller fall back
        with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
            # predictor
            dz, dw, dlam, dnu = direction(w * lam)
            if not np.all(np.isfinite(dz)):
                break
            if m:
                a_aff = min(_max_step(w, dw), _max_step(lam, dlam))
                mu_aff = float((w + a_aff * dw) @ (lam + a_aff * dlam)) / m
                sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
                # corrector
                dz, dw, dlam, dnu = direction(w * lam + dw * dlam - sigma * mu)
                a = min(1.0, STEP_FRACTION * min(_max_step(w, dw), _max_step(lam, dlam)))
            else:
                a = 1.0
        if not (np.all(np.isfinite(dz)) and np.all(np.isfinite(dlam)) and np.all(np.isfinite(dw))):
            break
        z = z + a * dz
        w = np.maximum(w + a * dw, 1e-300)
        lam = np.maximum(lam + a * dlam, 1e-300)
        nu = nu + a * dnu
    return z, lam, nu, it, False


def solve(p: QcqpProblem, tol: float = 1e-8, max_iter: int = 100, z0=None, marginal_relax: float = 1e-10) -> QcqpSolution:
    """Solve a convex QCQP.

    Args:
        p: problem data; H and every M_j must be positive semidefinite.
        tol: bound on the dual residual norm, the complementarity products
            and the constraint violation at an Optimal return.
        max_iter: iteration cap (per phase).
        z0: optional starting guess, e.g. a shifted previous solution.
        marginal_relax: if the iteration fails on a feasible problem whose
            quadratic rows leave no interior (multipliers then do not exist),
            the rows are loosened by this absolute amount and the solve is
            repeated. The amount is reported in ``relaxation``; it stays far
            below the 1e-7 feasibility contract.
    """
    p.validate()
    comp = _Compiled(p)
    z, eq_res = _equality_start(p, z0)
    if eq_res > max(tol, 1e-9 * (1 + np.abs(p.e).max(initial=0.0))):
        return QcqpSolution(z, p.objective(z), Status.INFEASIBLE, eq_res, np.inf, np.inf, certificate=eq_res)

    z, lam, nu, it, conv = _mehrotra(p, comp, z, tol, max_iter)
    if not conv and z0 is not None:
        # a guess close to a badly conditioned optimum can stall the iteration
        z1, lam1, nu1, it1, conv1 = _mehrotra(p, comp, _equality_start(p, None)[0], tol, max_iter)
        it += it1
        if conv1:
            z, lam, nu, conv = z1, lam1, nu1, True
    relax = 0.0
    if not conv:
        fr = feasibility_phase(p, tol=tol, max_iter=max_iter, z0=z0)
        if not fr.feasible:
            return QcqpSolution(
                fr.z, p.objective(fr.z), Status.INFEASIBLE, fr.max_violation, np.inf, np.inf,
                iterations=it, certificate=fr.max_violation, phase1_used=True,
            )
        if comp.n_quad and marginal_relax > 0 and not fr.strictly:
            loose = copy.copy(comp)
            loose.s = comp.s - marginal_relax
            z2, lam2, nu2, it2, conv2 = _mehrotra(p, loose, fr.z, tol, max_iter)
            if conv2:
                z, lam, nu, conv, relax = z2, lam2, nu2, True, marginal_relax
            it += it2

    f = comp.values(z) if comp.m else np.zeros(0)
    Df = comp.jacobian(z) if comp.m else np.zeros((0, p.d))
    r_dual = p.H @ z + p.g + Df.T @ lam + p.E.T @ nu
    lin_mult = lam[: comp.n_lin].copy()
    for i, src in enumerate(comp.src):
        if src[0] == "C" and len(src) == 3:
            lin_mult[i] /= src[2]
    return QcqpSolution(
        z=z,
        objective=p.objective(z),
        status=Status.OPTIMAL if conv else Status.MAX_ITERATIONS,
        primal_residual=p.max_violation(z),
        dual_residual=float(np.linalg.norm(r_dual)),
        complementarity=float(np.abs(lam * f).max(initial=0.0)),
        iterations=it,
        quad_multipliers=lam[comp.n_lin :].copy(),
        linear_multipliers=lin_mult,
        eq_multipliers=nu.copy(),
        relaxation=relax,
        phase1_used=not conv or relax > 0,
    )


def kkt_residuals(p: QcqpProblem, sol: QcqpSolution) -> dict[str, float]:
    """Recompute stationarity, complementarity and sign conditions from scratch."""
    z = sol.z
    comp = _Compiled(p)
    f = comp.values(z)
    Df = comp.jacobian(z)
    lam = np.concatenate([sol.linear_multipliers, sol.quad_multipliers])
    # undo the row normalization of C
    lam_scaled = lam.copy()
    for i, src in enumerate(comp.src):
        if src[0] == "C" and len(src) == 3:
            lam_scaled[i] *= src[2]
    r = p.H @ z + p.g
    if comp.m:
        r = r + Df.T @ lam_scaled
    if p.E.shape[0]:
        r = r + p.E.T @ sol.eq_multipliers
    return {
        "stationarity": float(np.linalg.norm(r)),
        "complementarity": float(np.abs(lam_scaled * f).max(initial=0.0)),
        "dual_sign": float(max(0.0, -lam.min(initial=0.0))),
        "primal": p.max_violation(z),
    }


def dump_problem(p: QcqpProblem, path) -> None:
    """Plain-text dump: a header line per block, then rows (row-major)."""

    def block(fh, name, arr):
        arr = np.atleast_2d(np.asarray(arr, dtype=float))
        fh.write(f"{name} {arr.shape[0]} {arr.shape[1]}\n")
        for row in arr:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")

    with open(path, "w") as fh:
        fh.write(f"qcqp d={p.d} eq={p.E.shape[0]} lin={p.C.shape[0]} quad={len(p.quads)}\n")
        block(fh, "H", p.H)
        block(fh, "g", p.g.reshape(1, -1))
        block(fh, "c0", [[p.c0]])
        block(fh, "E", p.E if p.E.size else np.zeros((0, p.d)))
        block(fh, "e", p.e.reshape(1, -1))
        block(fh, "lo", p.lo.reshape(1, -1))
        block(fh, "hi", p.hi.reshape(1, -1))
        block(fh, "C", p.C if p.C.size else np.zeros((0, p.d)))
        block(fh, "c", p.c.reshape(1, -1))
        for j, qc in enumerate(p.quads):
            block(fh, f"M{j}", qc.M)
            block(fh, f"q{j}", qc.q.reshape(1, -1))
            block(fh, f"s{j}", [[qc.s]])


def load_problem(path) -> QcqpProblem:
    blocks: dict[str, np.ndarray] = {}
    with open(path) as fh:
        header = fh.readline().split()
        nquad = int(header[4].split("=")[1])
        d = int(header[1].split("=")[1])
        while True:
            line = fh.readline()
            if not line:
                break
            name, r, c = line.split()
            r, c = int(r), int(c)
            rows = [[float(v) for v in fh.readline().split()] for _ in range(r)]
            blocks[name] = np.array(rows, dtype=float).reshape(r, c)
    quads = [
        QuadConstraint(blocks[f"M{j}"], blocks[f"q{j}"].ravel(), float(blocks[f"s{j}"][0, 0]))
        for j in range(nquad)
    ]
    return QcqpProblem(
        H=blocks["H"], g=blocks["g"].ravel(), c0=float(blocks["c0"][0, 0]),
        E=blocks["E"].reshape(-1, d), e=blocks["e"].ravel(),
        lo=blocks["lo"].ravel(), hi=blocks["hi"].ravel(),
        C=blocks["C"].reshape(-1, d), c=blocks["c"].ravel(), quads=quads,
    )
