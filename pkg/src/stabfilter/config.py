"""YAML scenario configs: loading, dotted-key overrides and scenario construction.

A config has the top-level blocks ``plant``, ``box``, ``cost``, ``terminal``,
``filter``, ``reference``, ``policy`` and ``run``. Matrices are nested lists
whose shapes are checked against the plant before anything is solved. File
paths are resolved relative to the config file.
"""

from __future__ import annotations

import copy
import importlib.resources
from pathlib import Path

import numpy as np
import yaml

from .costs import StabilityCost
from .filter import FilterConfig
from .model import BoxConstraints, LinearDynamics, ReferenceTrajectory, error_box, load_reference_csv
from .sim import Composite, DestabilizingFeedback, Recorded, ReferenceFeedforward, Scenario
from .terminal import TerminalIngredients, load_ingredients, solve_riccati, terminal_set_level

BLOCKS = ("plant", "box", "cost", "terminal", "filter", "reference", "policy", "run")


class ConfigError(ValueError):
    pass


def bundled_config(name: str) -> Path:
    """Path of a config shipped with the package, e.g. ``double_integrator``."""
    path = Path(str(importlib.resources.files("stabfilter") / "configs" / f"{name}.yaml"))
    if not path.exists():
        raise ConfigError(f"no bundled config named {name!r}")
    return path


def bundled_names() -> list[str]:
    root = Path(str(importlib.resources.files("stabfilter") / "configs"))
    return sorted(p.stem for p in root.glob("*.yaml"))


def parse_override(text: str) -> tuple[list[str], object]:
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override {text!r} is not of the form key=value")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {text!r}: {exc}") from exc
    return key.strip().split("."), value


def apply_overrides(raw: dict, overrides) -> dict:
    """Returns a copy of ``raw`` with each ``a.b.c=value`` applied."""
    out = copy.deepcopy(raw)
    for text in overrides or ():
        path, value = parse_override(text)
        node = out
        for part in path[:-1]:
            nxt = node.get(part)
            if nxt is None:
                nxt = node[part] = {}
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {text!r}: {part} is not a block")
            node = nxt
        node[path[-1]] = value
    return out


def load_config(path, overrides=None) -> dict:
    """Reads a YAML config, applies overrides and records its directory."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping")
    unknown = set(raw) - set(BLOCKS) - {"name"}
    if unknown:
        raise ConfigError(f"unknown config blocks {sorted(unknown)}")
    eff = apply_overrides(raw, overrides)
    eff.setdefault("name", path.stem)
    eff["_base"] = str(path.parent.resolve())
    return eff


def dump_config(cfg: dict, path) -> None:
    out = {k: v for k, v in cfg.items() if not k.startswith("_")}
    Path(path).write_text(yaml.safe_dump(out, sort_keys=False, default_flow_style=None))


# ----------------------------------------------------------------------------
# Field helpers


def _num(v, what: str) -> float:
    # PyYAML reads "1e-3" as a string, so numbers are coerced here
    try:
        return float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{what}: expected a number, got {v!r}") from None


def _int(v, what: str) -> int:
    f = _num(v, what)
    if f != int(f):
        raise ConfigError(f"{what}: expected an integer, got {v!r}")
    return int(f)


def _mat(v, shape, what: str) -> np.ndarray:
    try:
        a = np.array([[_num(x, what) for x in row] for row in v], dtype=float)
    except TypeError:
        raise ConfigError(f"{what}: expected a matrix given as a list of rows") from None
    if a.ndim != 2 or (shape is not None and a.shape != tuple(shape)):
        raise ConfigError(f"{what}: expected shape {shape}, got {a.shape}")
    return a


def _vec(v, size: int | None, what: str) -> np.ndarray:
    if isinstance(v, (int, float, str)) and size is not None:
        return np.full(size, _num(v, what))
    try:
        a = np.array([_num(x, what) for x in v], dtype=float)
    except TypeError:
        raise ConfigError(f"{what}: expected a list") from None
    if size is not None and a.shape != (size,):
        raise ConfigError(f"{what}: expected {size} entries, got {a.shape[0]}")
    return a


def _block(cfg: dict, name: str, required: bool = True) -> dict:
    b = cfg.get(name)
    if b is None:
        if required:
            raise ConfigError(f"missing block {name!r}")
        return {}
    if not isinstance(b, dict):
        raise ConfigError(f"block {name!r} must be a mapping")
    return b


def _file(cfg: dict, rel, what: str) -> Path:
    if rel is None:
        raise ConfigError(f"{what}: file path missing")
    p = Path(rel)
    if not p.is_absolute():
        p = Path(cfg.get("_base", ".")) / p
    if not p.exists():
        raise ConfigError(f"{what}: file {p} does not exist")
    return p


# ----------------------------------------------------------------------------
# Blocks


def build_plant(cfg: dict) -> LinearDynamics:
    b = _block(cfg, "plant")
    kind = b.get("type", "matrices")
    if kind == "matrices":
        A = _mat(b.get("A"), None, "plant.A")
        n = A.shape[0]
        B = _mat(b.get("B"), None, "plant.B")
        if B.shape[0] != n or A.shape != (n, n):
            raise ConfigError(f"plant: A {A.shape} and B {B.shape} are incompatible")
        if "Ts" in b:
            from .vehicle import discretize_zoh

            return discretize_zoh(A, B, _num(b["Ts"], "plant.Ts"))
        return LinearDynamics(A, B)
    if kind == "single_track":
        from .vehicle import TS, SingleTrackParams, discretize_zoh, linearize_single_track

        try:
            params = SingleTrackParams(**{k: _num(v, f"plant.params.{k}") for k, v in (b.get("params") or {}).items()})
        except TypeError as exc:
            raise ConfigError(f"plant.params: {exc}") from None
        return discretize_zoh(*linearize_single_track(params), _num(b.get("Ts", TS), "plant.Ts"))
    raise ConfigError(f"unknown plant type {kind!r}")


def build_box(cfg: dict, n: int, m: int) -> BoxConstraints:
    b = _block(cfg, "box")
    inf = float("inf")
    return BoxConstraints(
        _vec(b.get("x_lo", -inf), n, "box.x_lo"),
        _vec(b.get("x_hi", inf), n, "box.x_hi"),
        _vec(b.get("u_lo", -inf), m, "box.u_lo"),
        _vec(b.get("u_hi", inf), m, "box.u_hi"),
    )


def build_filter_config(cfg: dict) -> FilterConfig:
    b = dict(_block(cfg, "filter"))
    try:
        kw = {}
        for key in ("zeta_min", "rho", "gamma", "zeta_weight", "tol"):
            if key in b:
                kw[key] = _num(b.pop(key), f"filter.{key}")
        for key in ("N", "max_iter"):
            if key in b:
                kw[key] = _int(b.pop(key), f"filter.{key}")
        if b.get("zeta") is not None:
            kw["zeta"] = _num(b.pop("zeta"), "filter.zeta")
        b.pop("zeta", None)
        kw.update(b)
        return FilterConfig(**kw)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"filter: {exc}") from None


def build_reference(cfg: dict, dyn: LinearDynamics, steps: int) -> ReferenceTrajectory | None:
    b = _block(cfg, "reference", required=False)
    kind = b.get("type", "none")
    sigma = _num(b.get("tightening", 1.05), "reference.tightening")
    if kind == "none":
        return None
    if kind == "file":
        ref = load_reference_csv(_file(cfg, b.get("file"), "reference.file"), sigma)
        if ref.x.shape[1] != dyn.n or ref.u.shape[1] != dyn.m:
            raise ConfigError("reference.file: dimensions do not match the plant")
        return ref
    if kind == "lane_change":
        from .vehicle import DEFAULT_START, TS, lane_change_reference

        changes = b.get("changes")
        if changes is not None:
            changes = [tuple(_num(v, "reference.changes") for v in c) for c in changes]
        return lane_change_reference(
            dyn, steps, _num(b.get("Ts", TS), "reference.Ts"), changes,
            _num(b.get("start", DEFAULT_START), "reference.start"),
            _num(b.get("lateral_weight", 100.0), "reference.lateral_weight"), sigma,
        )
    raise ConfigError(f"unknown reference type {kind!r}")


def build_ingredients(cfg: dict, dyn, cost_QR, box, reference) -> TerminalIngredients:
    b = _block(cfg, "terminal", required=False)
    kind = b.get("type", "riccati")
    Q, R = cost_QR
    if kind == "degenerate":
        return TerminalIngredients.degenerate_for(dyn.n, dyn.m)
    if kind == "file":
        ti = load_ingredients(_file(cfg, b.get("file"), "terminal.file"))
        if ti.P.shape != (dyn.n, dyn.n) or ti.K.shape != (dyn.m, dyn.n):
            raise ConfigError("terminal.file: dimensions do not match the plant")
        return ti
    if kind == "riccati":
        P, K = solve_riccati(dyn, Q, R)
        tau = terminal_set_level(P, K, error_box(box, reference), _num(b.get("margin", 1.0), "terminal.margin"))
        return TerminalIngredients(P, K, tau)
    raise ConfigError(f"unknown terminal type {kind!r}")


def build_policy(cfg: dict, spec: dict, K: np.ndarray, m: int, n: int, what: str = "policy"):
    if not isinstance(spec, dict):
        raise ConfigError(f"{what} must be a mapping")
    kind = spec.get("type")

    def gain():
        if "gain" in spec:
            return _mat(spec["gain"], (m, n), f"{what}.gain")
        if "lqr_scale" in spec:
            return _num(spec["lqr_scale"], f"{what}.lqr_scale") * K
        return None

    if kind == "reference_feedforward":
        return ReferenceFeedforward(
            _num(spec.get("noise", 0.0), f"{what}.noise"), gain(), spec.get("noise_scale", "absolute")
        )
    if kind == "destabilizing":
        F = gain()
        if F is None:
            raise ConfigError(f"{what}: destabilizing policy needs gain or lqr_scale")
        bias = spec.get("bias")
        return DestabilizingFeedback(
            F, _int(spec.get("onset", 0), f"{what}.onset"), None if bias is None else _vec(bias, m, f"{what}.bias")
        )
    if kind == "recorded":
        rec = Recorded.from_csv(_file(cfg, spec.get("file"), f"{what}.file"))
        if rec.trace.shape[1] != m:
            raise ConfigError(f"{what}.file: expected {m} input columns")
        return rec
    if kind == "composite":
        sched = spec.get("schedule") or []
        return Composite([
            (_int(s.get("start", 0), f"{what}.schedule.start"), build_policy(cfg, s.get("policy"), K, m, n, f"{what}.schedule"))
            for s in sched
        ])
    raise ConfigError(f"unknown {what} type {kind!r}")


def build(cfg: dict) -> Scenario:
    """Constructs the scenario; every dimension is checked before any solve."""
    dyn = build_plant(cfg)
    n, m = dyn.n, dyn.m
    box = build_box(cfg, n, m)
    fcfg = build_filter_config(cfg)
    run = _block(cfg, "run")
    T = _int(run.get("T", 100), "run.T")
    if T < 1:
        raise ConfigError("run.T must be at least 1")
    x0 = _vec(run.get("x0"), n, "run.x0")
    c = _block(cfg, "cost")
    Q = _mat(c.get("Q"), (n, n), "cost.Q")
    R = _mat(c.get("R"), (m, m), "cost.R")
    reference = build_reference(cfg, dyn, T + fcfg.N + 1)
    if reference is not None and len(reference) < T + fcfg.N + 1:
        raise ConfigError(f"reference has {len(reference)} points, run needs {T + fcfg.N + 1}")
    try:
        ti = build_ingredients(cfg, dyn, (Q, R), box, reference)
        cost = StabilityCost(Q, R, ti.P)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"terminal: {exc}") from None
    if fcfg.degenerate_terminal != ti.degenerate:
        raise ConfigError("filter.degenerate_terminal must match terminal.type")
    policy = build_policy(cfg, _block(cfg, "policy"), ti.K, m, n)
    if isinstance(policy, Recorded):
        try:
            policy.check_length(T)
        except ValueError as exc:
            raise ConfigError(f"policy: {exc}") from None
    tol = run.get("convergence_tol")
    return Scenario(
        dyn, cost, box, ti, fcfg, policy, x0, T, reference,
        _int(run.get("seed", 0), "run.seed"),
        None if tol is None else _num(tol, "run.convergence_tol"),
        info={"name": cfg.get("name", "scenario")},
    )
