"""Closed-loop rollouts, desired-input policies, logs and post-hoc verification."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .costs import StabilityCost, stage_cost
from .filter import FilterConfig, StabilityFilter
from .model import BoxConstraints, LinearDynamics, ReferenceTrajectory
from .terminal import TerminalIngredients

BOX_TOL = 1e-9
DECREASE_TOL = 1e-6
BOUND_TOL = 1e-6


# ----------------------------------------------------------------------------
# Desired-input policies
#
# A policy is called as policy(k, x, ref, rng) with ref = (x^r(k), u^r(k)),
# zeros for regulation, and rng the run's seeded generator; it returns u_des(k).


def _ref_parts(ref):
    return np.asarray(ref[0], dtype=float), np.asarray(ref[1], dtype=float)


@dataclass
class Recorded:
    """Replays a stored (T, m) trace of desired inputs."""

    trace: np.ndarray

    def __post_init__(self):
        self.trace = np.atleast_2d(np.asarray(self.trace, dtype=float))

    @classmethod
    def from_csv(cls, path) -> "Recorded":
        """Reads either a rollout log (udes columns) or a plain numeric matrix."""
        with open(path) as fh:
            lines = [ln for ln in fh if not ln.startswith("#") and ln.strip()]
        header = lines[0].strip().split(",")
        if "k" in header:
            cols = [i for i, h in enumerate(header) if h.startswith("udes")]
            rows = [ln.strip().split(",") for ln in lines[1:]]
            return cls(np.array([[float(r[i]) for i in cols] for r in rows]))
        return cls(np.loadtxt(io.StringIO("".join(lines)), delimiter=",", ndmin=2))

    def check_length(self, T: int):
        if self.trace.shape[0] < T:
            raise ValueError(f"recorded trace has {self.trace.shape[0]} rows, run needs {T}")

    def __call__(self, k, x, ref, rng):
        return self.trace[k].copy()


@dataclass
class ReferenceFeedforward:
    """u^r + gain (x - x^r) plus uniform noise.

    ``noise_scale="error"`` multiplies the amplitude by ||x - x^r||, i.e. a
    driver whose imprecision shrinks with the tracking error.
    """

    noise: float = 0.0
    gain: np.ndarray | None = None
    noise_scale: str = "absolute"

    def __post_init__(self):
        if self.noise < 0:
            raise ValueError("noise amplitude must be nonnegative")
        if self.noise_scale not in ("absolute", "error"):
            raise ValueError(f"unknown noise scale {self.noise_scale!r}")
        if self.gain is not None:
            self.gain = np.atleast_2d(np.asarray(self.gain, dtype=float))

    def __call__(self, k, x, ref, rng):
        x = np.asarray(x, dtype=float)
        xr, ur = _ref_parts(ref)
        u = ur.copy()
        if self.gain is not None:
            u = u + self.gain @ (x - xr)
        if self.noise > 0:
            amp = self.noise * (np.linalg.norm(x - xr) if self.noise_scale == "error" else 1.0)
            u = u + amp * rng.uniform(-1.0, 1.0, u.shape[0])
        return u


@dataclass
class DestabilizingFeedback:
    """From ``onset`` on: u^r + gain (x - x^r) + bias; before it plain u^r."""

    gain: np.ndarray
    onset: int = 0
    bias: np.ndarray | None = None

    def __post_init__(self):
        self.gain = np.atleast_2d(np.asarray(self.gain, dtype=float))
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=float).reshape(self.gain.shape[0])

    def __call__(self, k, x, ref, rng):
        x = np.asarray(x, dtype=float)
        xr, ur = _ref_parts(ref)
        if k < self.onset:
            return ur.copy()
        u = ur + self.gain @ (x - xr)
        if self.bias is not None:
            u = u + self.bias
        return u


@dataclass
class Composite:
    """Switches between policies; ``schedule`` holds (start step, policy) pairs."""

    schedule: list

    def __post_init__(self):
        if not self.schedule:
            raise ValueError("empty schedule")
        self.schedule = sorted(self.schedule, key=lambda s: s[0])
        if self.schedule[0][0] != 0:
            raise ValueError("schedule must start at step 0")

    def active(self, k: int):
        current = self.schedule[0][1]
        for start, pol in self.schedule:
            if k >= start:
                current = pol
        return current

    def __call__(self, k, x, ref, rng):
        return self.active(k)(k, x, ref, rng)


# ----------------------------------------------------------------------------
# Log


@dataclass
class RolloutLog:
    x: np.ndarray
    u_des: np.ndarray
    u: np.ndarray
    V: np.ndarray
    J_B: np.ndarray
    zeta: np.ndarray
    match: np.ndarray
    status: list[str]
    H: np.ndarray
    H_B: np.ndarray
    ell: np.ndarray | None = None
    meta: dict = field(default_factory=dict)
    # per-step extras kept in memory only
    extras: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.x.shape[0]

    @property
    def certified(self) -> np.ndarray:
        from .filter import CERTIFY_TOL

        return self.match <= CERTIFY_TOL

    def header(self) -> list[str]:
        n, m = self.x.shape[1], self.u.shape[1]
        return (
            ["k"]
            + [f"x{i + 1}" for i in range(n)]
            + [f"udes{i + 1}" for i in range(m)]
            + [f"u{i + 1}" for i in range(m)]
            + ["V", "JB", "zeta", "match_err", "status", "H", "HB"]
        )

    def to_csv(self, path) -> None:
        f = lambda v: f"{v:.16e}"  # noqa: E731
        with open(path, "w", newline="") as fh:
            for key in sorted(self.meta):
                fh.write(f"# {key}={self.meta[key]}\n")
            fh.write(",".join(self.header()) + "\n")
            for k in range(self.T):
                row = [str(k)]
                row += [f(v) for v in self.x[k]]
                row += [f(v) for v in self.u_des[k]]
                row += [f(v) for v in self.u[k]]
                row += [f(self.V[k]), f(self.J_B[k]), f(self.zeta[k]), f(self.match[k]), self.status[k]]
                row += [f(self.H[k]), f(self.H_B[k])]
                fh.write(",".join(row) + "\n")

    @classmethod
    def from_csv(cls, path) -> "RolloutLog":
        meta, body = {}, []
        with open(path) as fh:
            for line in fh:
                if line.startswith("#"):
                    key, _, val = line[1:].strip().partition("=")
                    meta[key.strip()] = val.strip()
                elif line.strip():
                    body.append(line)
        rows = list(csv.reader(body))
        header, data = rows[0], rows[1:]
        if not data:
            raise ValueError("log has no rows")
        idx = {h: i for i, h in enumerate(header)}
        for name in ("V", "JB", "zeta", "match_err", "status", "H", "HB"):
            if name not in idx:
                raise ValueError(f"log column {name} missing")

        def cols(prefix):
            names = [h for h in header if h.startswith(prefix) and h[len(prefix):].isdigit()]
            names.sort(key=lambda h: int(h[len(prefix):]))
            return np.array([[float(r[idx[h]]) for h in names] for r in data])

        col = lambda h: np.array([float(r[idx[h]]) for r in data])  # noqa: E731
        ks = [int(r[idx["k"]]) for r in data]
        if ks != list(range(len(data))):
            raise ValueError("log step column is not 0..T-1")
        return cls(
            x=cols("x"), u_des=cols("udes"), u=cols("u"),
            V=col("V"), J_B=col("JB"), zeta=col("zeta"), match=col("match_err"),
            status=[r[idx["status"]] for r in data], H=col("H"), H_B=col("HB"), meta=meta,
        )


# ----------------------------------------------------------------------------
# Rollout


def performance_series(log: RolloutLog, zeta_min: float, ell=None):
    """H(k) = sum_{i<k} l(i) and H_B(k) = (V(0) - V(k)) / zeta_min, k = 0..T-1.

    ``ell`` overrides the stage costs stored in the log.
    """
    ell = log.ell if ell is None else np.asarray(ell, dtype=float)
    if ell is None:
        raise ValueError("stage costs unknown; pass ell")
    H = np.concatenate([[0.0], np.cumsum(ell)[:-1]])
    H_B = (log.V[0] - log.V) / zeta_min
    return H, H_B


def run_closed_loop(
    dyn: LinearDynamics,
    cost: StabilityCost,
    cfg: FilterConfig,
    ingredients: TerminalIngredients,
    box: BoxConstraints,
    policy,
    x0,
    T: int,
    reference: ReferenceTrajectory | None = None,
    seed: int = 0,
    filt: StabilityFilter | None = None,
) -> RolloutLog:
    """Runs T filter steps on the plant x(k+1) = A x(k) + B u(k).

    Raises:
        InitialInfeasibility: from the k = 0 solve.
        RecursiveFeasibilityViolation, WarmStartDecreaseError: mid-run.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    if isinstance(policy, Recorded):
        policy.check_length(T)
    if reference is not None and len(reference) < T + cfg.N + 1:
        raise ValueError(f"reference too short for T={T}, N={cfg.N}")
    filt = filt or StabilityFilter(dyn, cost, ingredients, box, cfg, reference)
    rng = np.random.default_rng(seed)
    n, m = dyn.n, dyn.m
    x = np.asarray(x0, dtype=float).reshape(n).copy()
    X, Ud, U = np.zeros((T, n)), np.zeros((T, m)), np.zeros((T, m))
    V, JB, Z, M, ell = (np.zeros(T) for _ in range(5))
    status: list[str] = []
    ex = {"J_B_next": np.zeros(T), "candidate_cost": np.zeros(T), "in_terminal": np.zeros(T, dtype=bool),
          "active": [], "x_final": None}

    state = filt.initialize(x)
    for k in range(T):
        ref = reference.point(k) if reference is not None else (np.zeros(n), np.zeros(m))
        ud = np.asarray(policy(k, x, ref, rng), dtype=float).reshape(m)
        res, state_next = filt.step(state, x, ud)
        X[k], Ud[k], U[k] = x, ud, res.u_applied
        V[k], Z[k], M[k], ell[k] = res.V, res.zeta, res.matching_error, res.ell
        JB[k] = res.J_B_used
        status.append(res.status.value)
        ex["J_B_next"][k] = res.J_B_next
        ex["candidate_cost"][k] = res.candidate_cost
        ex["in_terminal"][k] = ingredients.contains(x, ref[0])
        ex["active"].append(res.active)
        x = dyn.A @ x + dyn.B @ res.u_applied
        state = state_next
    ex["x_final"] = x
    meta = {
        "seed": seed,
        "T": T,
        "mode": cfg.mode.value,
        "zeta_min": repr(cfg.zeta_min),
        "zeta_policy": cfg.zeta_policy,
        "N": cfg.N,
        "mpc_solves": filt.mpc_solves,
    }
    log = RolloutLog(X, Ud, U, V, JB, Z, M, status, np.zeros(T), np.zeros(T), ell, meta, ex)
    if cfg.stability:
        log.H, log.H_B = performance_series(log, cfg.zeta_min)
    else:
        log.H = np.concatenate([[0.0], np.cumsum(ell)[:-1]])
        log.H_B = np.full(T, np.nan)
    return log


# ----------------------------------------------------------------------------
# Verification


@dataclass
class Check:
    name: str
    passed: bool | None  # None: not applicable to the mode
    detail: str = ""
    first_failure: int | None = None

    def line(self) -> str:
        flag = "SKIP" if self.passed is None else ("PASS" if self.passed else "FAIL")
        at = "" if self.first_failure is None else f" first_failure_k={self.first_failure}"
        return f"{flag} {self.name} {self.detail}{at}".rstrip()


@dataclass
class VerificationReport:
    checks: list[Check]

    @property
    def passed(self) -> bool:
        return all(c.passed is not False for c in self.checks)

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def lines(self) -> list[str]:
        return [c.line() for c in self.checks]

    def __str__(self) -> str:
        return "\n".join(self.lines())


def _first(bad: np.ndarray, offset: int = 0) -> int | None:
    idx = np.flatnonzero(bad)
    return int(idx[0]) + offset if idx.size else None


def recompute_stage_costs(log: RolloutLog, cost: StabilityCost, reference: ReferenceTrajectory | None = None):
    return np.array([
        stage_cost(cost, log.x[k], log.u[k], None if reference is None else reference.point(k))
        for k in range(log.T)
    ])


def verify_rollout(
    log: RolloutLog,
    cfg: FilterConfig,
    cost: StabilityCost,
    box: BoxConstraints,
    reference: ReferenceTrajectory | None = None,
    convergence_tol: float | None = None,
) -> VerificationReport:
    """Checks a closed-loop log against the guarantees of the configured mode.

    Stage costs are recomputed from the logged states and inputs, so a
    corrupted V, H or x column shows up as a failed check.
    """
    T, zmin = log.T, cfg.zeta_min
    checks = []

    bad = np.array([s != "Optimal" for s in log.status])
    checks.append(Check("all_optimal", not bad.any(), f"optimal={T - int(bad.sum())}/{T}", _first(bad)))

    ex = np.maximum(log.x - box.x_hi, box.x_lo - log.x).max(axis=1)
    eu = np.maximum(log.u - box.u_hi, box.u_lo - log.u).max(axis=1)
    worst = np.maximum(ex, eu)
    bad = worst > BOX_TOL
    checks.append(Check("box_constraints", not bad.any(), f"max_violation={max(worst.max(), 0.0):.3e} tol={BOX_TOL:g}", _first(bad)))

    ell = recompute_stage_costs(log, cost, reference)
    if not cfg.stability:
        for name in ("decrease", "performance_bound", "telescoped_bound", "value_below_initial_bound"):
            checks.append(Check(name, None, "mode has no stability constraint"))
    else:
        dec = log.V[1:] - (log.V[:-1] - zmin * ell[:-1])
        bad = dec > DECREASE_TOL
        worst = float(dec.max()) if dec.size else 0.0
        checks.append(Check("decrease", not bad.any(), f"max(V(k+1)-V(k)+zeta_min*l(k))={worst:.3e} tol={DECREASE_TOL:g}", _first(bad, 1)))

        H, H_B = performance_series(log, zmin, ell)
        gap = H - H_B
        bad = gap > BOUND_TOL
        checks.append(Check("performance_bound", not bad.any(), f"max(H-H_B)={gap.max():.3e} H(T-1)={H[-1]:.6e} H_B(T-1)={H_B[-1]:.6e}", _first(bad)))

        # V(k) - V(0) <= -sum_{i<k} zeta(i+1) l(i); rows with no zeta use zeta_min
        z = np.where(np.isfinite(log.zeta), log.zeta, zmin)
        lhs = log.V[1:] - log.V[0]
        rhs = -np.cumsum(z[1:] * ell[:-1])
        gap = lhs - rhs
        bad = gap > BOUND_TOL
        checks.append(Check("telescoped_bound", not bad.any(), f"max_gap={(gap.max() if gap.size else 0.0):.3e}", _first(bad, 1)))

        excess = log.V - log.J_B[0]
        bad = excess > BOUND_TOL
        checks.append(Check("value_below_initial_bound", not bad.any(), f"max(V-J_B(0))={excess.max():.3e}", _first(bad)))

    if convergence_tol is None:
        checks.append(Check("convergence", None, "no threshold configured"))
    else:
        xr = np.array([reference.point(k)[0] for k in range(T)]) if reference is not None else np.zeros_like(log.x)
        err = np.linalg.norm(log.x - xr, axis=1)
        hit = _first(err <= convergence_tol)
        ok = bool(err[-1] <= convergence_tol)
        checks.append(Check("convergence", ok, f"final_error={err[-1]:.3e} tol={convergence_tol:g} first_reached_k={hit}"))
    return VerificationReport(checks)


# ----------------------------------------------------------------------------
# Scenario bundle


@dataclass
class Scenario:
    """Everything needed to run and verify one closed-loop experiment."""

    dyn: LinearDynamics
    cost: StabilityCost
    box: BoxConstraints
    ingredients: TerminalIngredients
    cfg: FilterConfig
    policy: object
    x0: np.ndarray
    T: int
    reference: ReferenceTrajectory | None = None
    seed: int = 0
    convergence_tol: float | None = None
    info: dict = field(default_factory=dict)

    def make_filter(self) -> StabilityFilter:
        return StabilityFilter(self.dyn, self.cost, self.ingredients, self.box, self.cfg, self.reference)

    def run(self, seed: int | None = None) -> RolloutLog:
        return run_closed_loop(
            self.dyn, self.cost, self.cfg, self.ingredients, self.box, self.policy, self.x0, self.T,
            self.reference, self.seed if seed is None else seed,
        )

    def verify(self, log: RolloutLog) -> VerificationReport:
        return verify_rollout(log, self.cfg, self.cost, self.box, self.reference, self.convergence_tol)


__all__ = [
    "Scenario",
    "Composite",
    "DestabilizingFeedback",
    "Recorded",
    "ReferenceFeedforward",
    "RolloutLog",
    "VerificationReport",
    "performance_series",
    "run_closed_loop",
    "verify_rollout",
]
