"""Figure data for a rollout and its PNG rendering.

Three figures: a tracked state over time (filtered, desired-input only and
reference), a chosen input (desired and applied), and the performance pair
H, H_B. Each is written as CSV; PNGs are rendered from exactly those arrays.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .sim import RolloutLog, Scenario


def desired_only_states(sc: Scenario, T: int, seed: int | None = None) -> np.ndarray:
    """States the plant would visit if the desired inputs were applied unfiltered."""
    rng = np.random.default_rng(sc.seed if seed is None else seed)
    n, m = sc.dyn.n, sc.dyn.m
    x = np.asarray(sc.x0, dtype=float).copy()
    out = np.zeros((T, n))
    for k in range(T):
        out[k] = x
        ref = sc.reference.point(k) if sc.reference is not None else (np.zeros(n), np.zeros(m))
        x = sc.dyn.A @ x + sc.dyn.B @ np.asarray(sc.policy(k, x, ref, rng), dtype=float).reshape(m)
    return out


def figure_data(sc: Scenario, log: RolloutLog, Ts: float = 1.0, state: int = 0, inp: int = 0) -> dict:
    """{name: (header, array)} for the three figures; indices are 0-based."""
    T = log.T
    t = np.arange(T) * Ts
    xr = np.array([sc.reference.point(k)[0][state] for k in range(T)]) if sc.reference is not None else np.zeros(T)
    free = desired_only_states(sc, T, int(log.meta.get("seed", sc.seed)))[:, state]
    return {
        "state": (["t", "reference", "filtered", "desired_only"], np.column_stack([t, xr, log.x[:, state], free])),
        "input": (["t", "desired", "applied"], np.column_stack([t, log.u_des[:, inp], log.u[:, inp]])),
        "performance": (["t", "H", "H_B"], np.column_stack([t, log.H, log.H_B])),
    }


def write_csv(path, header, data) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in data:
            fh.write(",".join(f"{v:.16e}" for v in row) + "\n")


def render_png(path, name: str, header, data, labels: dict | None = None) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = labels or {}
    fig, ax = plt.subplots(figsize=(6.4, 3.2))
    for j in range(1, len(header)):
        ax.plot(data[:, 0], data[:, j], label=header[j], lw=1.2)
    # an unfiltered run may diverge; frame the plot on the remaining series
    keep = [j for j in range(1, len(header)) if header[j] != "desired_only"]
    vals = data[:, keep]
    vals = vals[np.isfinite(vals)]
    if vals.size and len(keep) < len(header) - 1:
        lo, hi = float(vals.min()), float(vals.max())
        pad = 0.5 * max(hi - lo, 1e-9)
        ax.set_ylim(lo - pad, hi + pad)
    ax.set_xlabel(labels.get("t", "t"))
    ax.set_ylabel(labels.get(name, name))
    ax.grid(alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def export(sc: Scenario, log: RolloutLog, out_dir, Ts: float = 1.0, state: int = 0, inp: int = 0,
           png: bool = True, labels: dict | None = None) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, (header, data) in figure_data(sc, log, Ts, state, inp).items():
        p = out_dir / f"{name}.csv"
        write_csv(p, header, data)
        written.append(p)
        if png:
            q = out_dir / f"{name}.png"
            render_png(q, name, header, data, labels)
            written.append(q)
    return written
