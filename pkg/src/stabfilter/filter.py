"""Predictive safety filter with a stability constraint on the cost J.

One call of :meth:`StabilityFilter.step` is one iteration of the receding
horizon loop: solve the filter problem for the current state, desired input
and bound J_B(k), apply the first planned input and build J_B(k+1).

Bound-update modes:

* ``SafetyOnly``: no stability constraint, J_B is reported as inf.
* ``Convergence``: J_B(0) = gamma V^MPC(x(0)), then J_B(k+1) = V(k) - zeta l(k).
* ``TrackingConvergence``: the same with tracking costs around a reference.
* ``UniformWarmStart``: J_B(k) = J(x(k), u~) for an admissible warm start u~
  built from the shifted previous solution, no MPC solve after k = 0.

With an adaptive zeta the decrease factor becomes a decision variable in
[zeta_min, rho]. It is resolved in two stages: the matching problem is
solved jointly over (u, zeta) with the constraint J(u) + zeta l_prev <= V_prev,
then the first input is fixed and J is minimized over the remaining inputs,
which gives the largest admissible zeta for the applied input.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from . import qcqp
from .condensed import Prediction
from .costs import StabilityCost, stability_cost_J, stage_cost, terminal_cost
from .model import BoxConstraints, LinearDynamics, ReferenceTrajectory, ReferenceWindow, reference_window
from .terminal import TerminalIngredients, terminal_controller, terminal_rollout

log = logging.getLogger(__name__)

CERTIFY_TOL = 1e-6
DECREASE_TOL = 1e-7
ACTIVE_SLACK = 1e-6
ACTIVE_MULT = 1e-6
ACTIVE_GAP = 1e-7
STABILITY_SCALE_FLOOR = 1e-8
# the row is evaluated in expanded form, whose roundoff grows with its constant
STABILITY_SCALE_REL = 1e-6


class Mode(str, enum.Enum):
    SAFETY_ONLY = "SafetyOnly"
    CONVERGENCE = "Convergence"
    UNIFORM_WARM_START = "UniformWarmStart"
    TRACKING_CONVERGENCE = "TrackingConvergence"


class FilterError(RuntimeError):
    """Base class; ``dump`` holds the state needed to reproduce the failure."""

    def __init__(self, msg: str, k: int, dump: dict | None = None):
        super().__init__(msg)
        self.k = k
        self.dump = dump or {}


class InitialInfeasibility(FilterError):
    pass


class RecursiveFeasibilityViolation(FilterError):
    pass


class WarmStartDecreaseError(FilterError):
    pass


@dataclass(frozen=True)
class FilterConfig:
    """Filter settings.

    Attributes:
        zeta_policy: ``"fixed"`` or ``"adaptive"``.
        zeta: value used by the fixed policy; defaults to ``zeta_min``.
        zeta_weight: weight lambda_zeta of lambda (rho - zeta)^2 added to the
            joint matching objective in adaptive mode. The default 0 keeps
            matching strictly first; larger zeta is then recovered in the
            second stage.
    """

    N: int
    mode: Mode = Mode.CONVERGENCE
    zeta_min: float = 0.1
    rho: float = 1.0
    gamma: float = 1.0
    zeta_policy: str = "fixed"
    zeta: float | None = None
    zeta_weight: float = 0.0
    degenerate_terminal: bool = False
    tol: float = 1e-8
    max_iter: int = 100

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if not 0.0 < self.zeta_min <= self.rho <= 1.0:
            raise ValueError("need 0 < zeta_min <= rho <= 1")
        if self.gamma < 1.0:
            raise ValueError("gamma must be at least 1")
        if self.zeta_policy not in ("fixed", "adaptive"):
            raise ValueError(f"unknown zeta policy {self.zeta_policy!r}")
        if self.zeta is not None and not self.zeta_min <= self.zeta <= self.rho:
            raise ValueError("fixed zeta must lie in [zeta_min, rho]")
        if self.zeta_weight < 0:
            raise ValueError("zeta_weight must be nonnegative")
        if self.mode is Mode.UNIFORM_WARM_START and self.zeta_policy == "adaptive":
            raise ValueError("the warm-start bound has no zeta to adapt")

    @property
    def adaptive(self) -> bool:
        return self.zeta_policy == "adaptive" and self.mode in (Mode.CONVERGENCE, Mode.TRACKING_CONVERGENCE)

    @property
    def fixed_zeta(self) -> float:
        return self.zeta_min if self.zeta is None else self.zeta

    @property
    def stability(self) -> bool:
        return self.mode is not Mode.SAFETY_ONLY


@dataclass
class FilterState:
    k: int = 0
    J_B: float = np.inf
    V_prev: float | None = None
    ell_prev: float | None = None
    warm_start: np.ndarray | None = None
    zeta_last: float = np.nan
    candidate: np.ndarray | None = None


@dataclass
class FilterStepResult:
    u_applied: np.ndarray
    certified: bool
    V: float
    J_B_used: float
    zeta: float
    status: qcqp.Status
    matching_error: float
    active: tuple[str, ...] = ()
    u_seq: np.ndarray | None = None
    ell: float = 0.0
    x_next: np.ndarray | None = None
    J_B_next: float = np.inf
    candidate_cost: float = np.nan
    solution: qcqp.QcqpSolution | None = field(default=None, repr=False)


# ----------------------------------------------------------------------------
# Bound updates


def init_bound(cfg: FilterConfig, V_mpc_0: float) -> float:
    return cfg.gamma * float(V_mpc_0)


def update_bound_convergence(cfg: FilterConfig, V_k: float, ell_k: float, zeta: float) -> float:
    """J_B(k+1) = V(k) - zeta l(k)."""
    if not cfg.zeta_min - 1e-12 <= zeta <= cfg.rho + 1e-12:
        raise ValueError(f"zeta={zeta} outside [{cfg.zeta_min}, {cfg.rho}]")
    return float(V_k) - zeta * float(ell_k)


def candidate_shift(u_opt, x, ti: TerminalIngredients, dyn: LinearDynamics, r_next: ReferenceWindow | None = None):
    """Shift the optimal sequence at x(k) and append kappa_f at the predicted x_N.

    Args:
        u_opt: (N, m) optimal inputs at time k.
        x: state x(k) the sequence was planned from.
        r_next: reference window at k+1; its entry N-1 is r(k+N).
    """
    if u_opt is None:
        raise ValueError("no previous solution to shift")
    u_opt = np.asarray(u_opt, dtype=float)
    N = u_opt.shape[0]
    xN = np.asarray(x, dtype=float)
    for u in u_opt:
        xN = dyn.A @ xN + dyn.B @ u
    r = None if r_next is None else (r_next.x[N - 1], r_next.u[N - 1])
    return np.vstack([u_opt[1:], terminal_controller(ti, xN, r)[None, :]])


def update_bound_warmstart(
    x_next,
    candidate,
    V_prev: float,
    ell_prev: float,
    ti: TerminalIngredients,
    cost: StabilityCost,
    dyn: LinearDynamics,
    r_next: ReferenceWindow | None = None,
    k: int = 0,
):
    """Admissible warm start at x(k+1) and its cost J_B(k+1).

    Returns:
        (J_B, warm_start, repaired)

    Raises:
        WarmStartDecreaseError: the warm start does not decrease the cost
            by l_prev, which only happens with broken terminal ingredients.
    """
    N = candidate.shape[0]
    J_c = stability_cost_J(cost, dyn, x_next, candidate, r_next)
    warm, J_w, repaired = candidate, J_c, False
    x_ref = None if r_next is None else r_next.x[0]
    if ti.contains(x_next, x_ref):
        Vf = terminal_cost(cost, x_next, x_ref)
        if J_c > Vf:
            warm = terminal_rollout(ti, dyn, x_next, N, r_next)
            J_w = stability_cost_J(cost, dyn, x_next, warm, r_next)
            repaired = True
    if J_w > V_prev - ell_prev + DECREASE_TOL * max(1.0, abs(V_prev)):
        raise WarmStartDecreaseError(
            f"warm start cost {J_w:.12e} exceeds V_prev - l_prev = {V_prev - ell_prev:.12e}",
            k,
            {"x_next": x_next, "warm_start": warm, "V_prev": V_prev, "ell_prev": ell_prev},
        )
    return J_w, warm, repaired


# ----------------------------------------------------------------------------
# Problem assembly


@dataclass
class _Layout:
    """Bookkeeping for the pieces of an assembled problem."""

    n_linear_state: int
    quad_names: list[str]
    adaptive: bool


def _check_ingredients(cfg: FilterConfig, ti: TerminalIngredients):
    if cfg.degenerate_terminal != ti.degenerate:
        raise ValueError("degenerate_terminal flag and terminal ingredients disagree")


def assemble_problem(
    cfg: FilterConfig,
    pred: Prediction,
    cost: StabilityCost,
    ti: TerminalIngredients,
    box: BoxConstraints,
    x,
    u_des=None,
    J_B: float = np.inf,
    r_window: ReferenceWindow | None = None,
    objective: str = "matching",
    V_prev: float | None = None,
    ell_prev: float | None = None,
    fix_u0=None,
):
    """Condensed QCQP for the filter (or the corresponding MPC) at state x.

    Args:
        objective: ``"matching"`` for G(u_des, u_0), ``"cost"`` for J itself.
        V_prev, ell_prev: given together in adaptive mode; the decision then
            carries zeta as last entry and the stability constraint reads
            J(u) - V_prev + zeta l_prev <= 0.
        fix_u0: pins u_0 through an equality block.

    Returns:
        (QcqpProblem, _Layout)
    """
    _check_ingredients(cfg, ti)
    N, n, m = pred.N, pred.n, pred.m
    if cfg.N != N:
        raise ValueError("prediction horizon differs from the configured N")
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (n,):
        raise ValueError("state dimension mismatch")
    if r_window is None:
        r_window = ReferenceWindow.zeros(N, n, m)
    if r_window.horizon != N:
        raise ValueError(f"reference window must have length {N + 1}")
    cost_J = cost.without_terminal() if cfg.degenerate_terminal else cost
    adaptive = V_prev is not None
    du = N * m
    d = du + (1 if adaptive else 0)

    def pad(M=None, q=None):
        Mp, qp = np.zeros((d, d)), np.zeros(d)
        if M is not None:
            Mp[:du, :du] = M
        if q is not None:
            qp[:du] = q
        return Mp, qp

    MJ, qJ, sJ = pred.cost_quadratic(cost_J, x, r_window)

    if objective == "matching":
        if u_des is None:
            raise ValueError("matching objective needs u_des")
        u_des = np.asarray(u_des, dtype=float).reshape(-1)
        if u_des.shape != (m,):
            raise ValueError("u_des dimension mismatch")
        H, g = np.zeros((d, d)), np.zeros(d)
        H[:m, :m] = 2.0 * np.eye(m)
        g[:m] = -2.0 * u_des
        c0 = float(u_des @ u_des)
        if adaptive and cfg.zeta_weight > 0:
            H[-1, -1] = 2.0 * cfg.zeta_weight
            g[-1] = -2.0 * cfg.zeta_weight * cfg.rho
            c0 += cfg.zeta_weight * cfg.rho**2
    elif objective == "cost":
        H, g = pad(MJ, qJ)
        c0 = sJ
    else:
        raise ValueError(f"unknown objective {objective!r}")

    lo = np.concatenate([np.tile(box.u_lo, N)] + ([[cfg.zeta_min]] if adaptive else []))
    hi = np.concatenate([np.tile(box.u_hi, N)] + ([[cfg.rho]] if adaptive else []))

    Cs, cs = pred.state_rows(box, x)
    C = np.zeros((Cs.shape[0], d))
    C[:, :du] = Cs

    E_rows, e_rows = [], []
    quads: list[qcqp.QuadConstraint] = []
    if ti.degenerate:
        Et, et = pred.terminal_equality(x, r_window.x[N])
        E_rows.append(np.hstack([Et, np.zeros((n, d - du))]))
        e_rows.append(et)
    else:
        Mt, qt, st = pred.terminal_quadratic(ti.P, ti.tau, x, r_window.x[N])
        Mp, qp = pad(Mt, qt)
        quads.append(qcqp.QuadConstraint(Mp, qp, st, "terminal"))
    if fix_u0 is not None:
        Ef = np.zeros((m, d))
        Ef[:, :m] = np.eye(m)
        E_rows.append(Ef)
        e_rows.append(np.asarray(fix_u0, dtype=float).reshape(m))

    # The stability row is divided by the size of its bound so that solver
    # tolerances act relative to the cost level, which shrinks towards zero.
    # Near zero the floor keeps roundoff of the expanded form below tol.
    floor = max(STABILITY_SCALE_FLOOR, STABILITY_SCALE_REL * abs(sJ))
    if adaptive:
        scale = max(abs(float(V_prev)), floor)
        Mp, qp = pad(MJ, qJ)
        qp[-1] = float(ell_prev)
        quads.append(qcqp.QuadConstraint(Mp / scale, qp / scale, (sJ - float(V_prev)) / scale, "stability"))
    elif np.isfinite(J_B):
        scale = max(abs(float(J_B)), floor)
        Mp, qp = pad(MJ, qJ)
        quads.append(qcqp.QuadConstraint(Mp / scale, qp / scale, (sJ - float(J_B)) / scale, "stability"))

    E = np.vstack(E_rows) if E_rows else None
    e = np.concatenate(e_rows) if e_rows else None
    p = qcqp.QcqpProblem(H, g, c0, E, e, lo, hi, C, cs, quads)
    return p, _Layout(Cs.shape[0], [qc.name for qc in quads], adaptive)


def _active_tags(p: qcqp.QcqpProblem, sol: qcqp.QcqpSolution, layout: _Layout, m: int) -> tuple[str, ...]:
    z = sol.z
    du = len(z) - (1 if layout.adaptive else 0)
    tags = []
    zu = z[:du]
    if np.any(zu - p.lo[:du] <= ACTIVE_SLACK) or np.any(p.hi[:du] - zu <= ACTIVE_SLACK):
        tags.append("input_box")
    if p.C.shape[0] and np.any(p.c - p.C @ z <= ACTIVE_SLACK * np.maximum(1.0, np.abs(p.c))):
        tags.append("state_box")
    for j, qc in enumerate(p.quads):
        if qc.name == "stability":
            continue
        slack = -qc.value(z)
        mult = sol.quad_multipliers[j] if len(sol.quad_multipliers) > j else 0.0
        if slack <= ACTIVE_SLACK * max(1.0, abs(qc.s)) and mult > ACTIVE_MULT:
            tags.append(qc.name)
    return tuple(tags)


# ----------------------------------------------------------------------------
# The filter


def solve_corresponding_mpc(
    pred: Prediction,
    cfg: FilterConfig,
    cost: StabilityCost,
    ti: TerminalIngredients,
    box: BoxConstraints,
    x,
    r_window: ReferenceWindow | None = None,
):
    """Minimize J under the filter constraints (no stability bound).

    Returns:
        (V_mpc, u_seq of shape (N, m), QcqpSolution). V_mpc is inf and
        u_seq None when x has no feasible input sequence.
    """
    p, _ = assemble_problem(cfg, pred, cost, ti, box, x, r_window=r_window, objective="cost")
    sol = qcqp.solve(p, tol=cfg.tol, max_iter=cfg.max_iter)
    if not sol.optimal:
        return np.inf, None, sol
    u_seq = sol.z.reshape(pred.N, pred.m)
    cost_J = cost.without_terminal() if cfg.degenerate_terminal else cost
    return stability_cost_J(cost_J, pred.dyn, x, u_seq, r_window), u_seq, sol


class StabilityFilter:
    """Filter instance bound to one plant, cost, terminal design and reference.

    Args:
        reference: stored reference for the tracking mode; None regulates to
            the origin.
    """

    def __init__(
        self,
        dyn: LinearDynamics,
        cost: StabilityCost,
        ti: TerminalIngredients,
        box: BoxConstraints,
        cfg: FilterConfig,
        reference: ReferenceTrajectory | None = None,
    ):
        _check_ingredients(cfg, ti)
        if cfg.mode is Mode.TRACKING_CONVERGENCE and reference is None:
            raise ValueError("tracking mode needs a reference")
        if (dyn.n, dyn.m) != (cost.n, cost.m) or (box.n, box.m) != (dyn.n, dyn.m):
            raise ValueError("dimension mismatch between plant, cost and constraints")
        self.dyn, self.ti, self.box, self.cfg = dyn, ti, box, cfg
        self.cost = cost.without_terminal() if cfg.degenerate_terminal else cost
        self._cost_full = cost
        self.reference = reference
        self.pred = Prediction(dyn, cfg.N)
        self.mpc_solves = 0

    def window(self, k: int) -> ReferenceWindow | None:
        if self.reference is None:
            return None
        return reference_window(self.reference, k, self.cfg.N)

    def _ref_point(self, k: int):
        return None if self.reference is None else self.reference.point(k)

    def J(self, x, u_seq, k: int) -> float:
        return stability_cost_J(self.cost, self.dyn, x, u_seq, self.window(k))

    def mpc(self, x, k: int = 0):
        self.mpc_solves += 1
        return solve_corresponding_mpc(self.pred, self.cfg, self._cost_full, self.ti, self.box, x, self.window(k))

    def initialize(self, x0) -> FilterState:
        """FilterState at k = 0 with J_B(0) per the configured mode.

        Raises:
            InitialInfeasibility: no feasible input sequence exists at x0.
        """
        cfg = self.cfg
        x0 = np.asarray(x0, dtype=float)
        st = FilterState(k=0)
        if cfg.mode is Mode.SAFETY_ONLY:
            return st
        r = self.window(0)
        x_ref = None if r is None else r.x[0]
        if cfg.mode is Mode.UNIFORM_WARM_START and self.ti.contains(x0, x_ref):
            warm = terminal_rollout(self.ti, self.dyn, x0, cfg.N, r)
        else:
            V, u_seq, sol = self.mpc(x0, 0)
            if u_seq is None:
                raise InitialInfeasibility(
                    f"x(0) admits no feasible input sequence (certificate {sol.certificate:.3e})",
                    0,
                    {"x": x0, "status": sol.status.value},
                )
            if cfg.mode is not Mode.UNIFORM_WARM_START:
                st.J_B = init_bound(cfg, V)
                return st
            warm = u_seq
        st.warm_start = warm
        st.candidate = warm
        st.J_B = self.J(x0, warm, 0)
        return st

    def _solve(self, p, hint, k: int, x, what: str):
        sol = qcqp.solve(p, tol=self.cfg.tol, max_iter=self.cfg.max_iter, z0=hint)
        if not sol.optimal:
            dump = {"x": np.asarray(x).tolist(), "status": sol.status.value, "what": what, "problem": p}
            exc = InitialInfeasibility if k == 0 else RecursiveFeasibilityViolation
            raise exc(f"{what} problem not solved at k={k}: {sol.status.value}", k, dump)
        return sol

    def step(self, state: FilterState, x, u_des) -> tuple[FilterStepResult, FilterState]:
        cfg, dyn, m, N = self.cfg, self.dyn, self.dyn.m, self.cfg.N
        k = state.k
        x = np.asarray(x, dtype=float).reshape(-1)
        u_des = np.asarray(u_des, dtype=float).reshape(-1)
        r = self.window(k)
        adaptive_now = cfg.adaptive and k > 0
        common = dict(r_window=r)
        if adaptive_now:
            common.update(V_prev=state.V_prev, ell_prev=state.ell_prev)
            J_B_used = np.nan
        else:
            J_B_used = state.J_B if cfg.stability else np.inf
            common.update(J_B=J_B_used)
        p, layout = assemble_problem(cfg, self.pred, self._cost_full, self.ti, self.box, x, u_des, **common)

        hint = None
        if state.candidate is not None:
            hint = state.candidate.reshape(-1)
            if adaptive_now:
                hint = np.append(hint, cfg.zeta_min)
        sol = self._solve(p, hint, k, x, "filter")
        active = _active_tags(p, sol, layout, m)
        u_seq = sol.z[: N * m].reshape(N, m)
        match = float(np.linalg.norm(u_des - u_seq[0]))
        if cfg.stability and match > CERTIFY_TOL and self._stability_binds(x, u_des, r, match, k):
            active = active + ("stability",)

        if not cfg.stability:
            zeta = np.nan
        elif adaptive_now:
            zeta, u_seq, J_B_used = self._refine_zeta(state, x, sol, r, "stability" in active, k)
        elif k == 0 or cfg.mode is Mode.UNIFORM_WARM_START:
            zeta = np.nan if k == 0 else 1.0
        else:
            zeta = cfg.fixed_zeta

        u0 = u_seq[0].copy()
        V = self.J(x, u_seq, k)
        ell = stage_cost(self.cost, x, u0, self._ref_point(k))
        match = float(np.linalg.norm(u_des - u0))
        x_next = dyn.A @ x + dyn.B @ u0

        r_next = self.window(k + 1) if self.reference is not None else None
        cand = candidate_shift(u_seq, x, self.ti, dyn, r_next)
        cand_cost = stability_cost_J(self.cost, dyn, x_next, cand, r_next)
        nxt = FilterState(k=k + 1, V_prev=V, ell_prev=ell, zeta_last=zeta, candidate=cand)
        if cfg.mode is Mode.SAFETY_ONLY:
            nxt.J_B = np.inf
        elif cfg.mode is Mode.UNIFORM_WARM_START:
            J_B_next, warm, _ = update_bound_warmstart(x_next, cand, V, ell, self.ti, self.cost, dyn, r_next, k + 1)
            nxt.J_B, nxt.warm_start, nxt.candidate = J_B_next, warm, warm
        elif cfg.adaptive:
            # resolved next step from (V_prev, ell_prev); report the loosest admissible bound
            nxt.J_B = update_bound_convergence(cfg, V, ell, cfg.zeta_min)
        else:
            nxt.J_B = update_bound_convergence(cfg, V, ell, cfg.fixed_zeta)

        res = FilterStepResult(
            u_applied=u0,
            certified=match <= CERTIFY_TOL,
            V=V,
            J_B_used=J_B_used,
            zeta=zeta,
            status=sol.status,
            matching_error=match,
            active=active,
            u_seq=u_seq,
            ell=ell,
            x_next=x_next,
            J_B_next=nxt.J_B,
            candidate_cost=cand_cost,
            solution=sol,
        )
        return res, nxt

    def _stability_binds(self, x, u_des, r, match: float, k: int) -> bool:
        """True when dropping the stability constraint would move u_0 closer to u_des."""
        p, _ = assemble_problem(self.cfg, self.pred, self._cost_full, self.ti, self.box, x, u_des, r_window=r)
        sol = self._solve(p, None, k, x, "safety")
        return match > float(np.linalg.norm(u_des - sol.z[: self.dyn.m])) + ACTIVE_GAP

    def _refine_zeta(self, state: FilterState, x, sol, r, stab_active: bool, k: int):
        """Second stage of the adaptive design.

        Fixes u_0 from the joint solve and minimizes J over the tail. The
        largest zeta with J_min <= V_prev - zeta l_prev then defines the bound.
        When the stability constraint binds in the joint problem its multiplier
        forces zeta to its lower bound, so zeta_min is kept.
        """
        cfg, m = self.cfg, self.dyn.m
        V_prev, ell_prev = state.V_prev, state.ell_prev
        u_seq = sol.z[:-1].reshape(cfg.N, m)
        p2, _ = assemble_problem(
            cfg, self.pred, self._cost_full, self.ti, self.box, x, r_window=r, objective="cost", fix_u0=sol.z[:m]
        )
        sol2 = qcqp.solve(p2, tol=cfg.tol, max_iter=cfg.max_iter, z0=sol.z[:-1])
        if sol2.optimal:
            u2 = sol2.z.reshape(cfg.N, m)
            if self.J(x, u2, k) <= self.J(x, u_seq, k):
                u_seq = u2
        J_min = self.J(x, u_seq, k)
        if stab_active:
            zeta = cfg.zeta_min
        elif ell_prev <= 0:
            zeta = cfg.rho
        else:
            zeta = float(np.clip((V_prev - J_min) / ell_prev, cfg.zeta_min, cfg.rho))
        return zeta, u_seq, V_prev - zeta * ell_prev
