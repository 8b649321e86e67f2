"""Command-line entry point.

Exit codes: 0 success, 1 verification or certification failed, 2 config or
input error, 3 initial infeasibility, 4 infeasibility or invariant
violation during a run.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import config as cfgmod
from .filter import FilterError, InitialInfeasibility
from .model import error_box
from .sim import RolloutLog
from .terminal import certify_assumption5, save_ingredients

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_INITIAL, EXIT_RUNTIME = 0, 1, 2, 3, 4

log = logging.getLogger("stabfilter")


def _resolve(path: str) -> Path:
    """A config path, or the name of a bundled config."""
    p = Path(path)
    if p.exists() or p.suffix:
        return p
    return cfgmod.bundled_config(path)


def _load(path: str, overrides, seed):
    ovr = list(overrides or [])
    if seed is not None:
        ovr.append(f"run.seed={seed}")
    raw = cfgmod.load_config(_resolve(path), ovr)
    return raw, cfgmod.build(raw)


def _plot_options(raw: dict):
    run = raw.get("run") or {}
    plot = run.get("plot") or {}
    Ts = plot.get("Ts", (raw.get("plant") or {}).get("Ts", 1.0))
    return (
        float(Ts),
        int(plot.get("state", 1)) - 1,
        int(plot.get("input", 1)) - 1,
        {k: str(v) for k, v in (plot.get("labels") or {}).items()},
    )


# ----------------------------------------------------------------------------
# Commands


def run_one(path: str, overrides, out: str, seed) -> int:
    try:
        raw, sc = _load(path, overrides, seed)
    except (cfgmod.ConfigError, ValueError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfgmod.dump_config(raw, out_dir / "effective_config.yaml")
    try:
        rollout = sc.run()
    except InitialInfeasibility as exc:
        log.error("initial infeasibility: %s", exc)
        return EXIT_INITIAL
    except FilterError as exc:
        log.error("run aborted: %s", exc)
        return EXIT_RUNTIME
    rollout.to_csv(out_dir / "log.csv")
    report = sc.verify(rollout)
    (out_dir / "report.txt").write_text(str(report) + "\n")
    print(f"[{raw['name']}] T={rollout.T} mpc_solves={rollout.meta['mpc_solves']} -> {out_dir}")
    print(report)
    return EXIT_OK if report.passed else EXIT_FAIL


def _run_job(job):
    return run_one(*job)


def cmd_run(args) -> int:
    configs = args.config
    if len(configs) == 1:
        return run_one(configs[0], args.override, args.out, args.seed)
    jobs = []
    for c in configs:
        name = Path(c).stem
        jobs.append((c, args.override, str(Path(args.out) / name), args.seed))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            codes = list(ex.map(_run_job, jobs))
    else:
        codes = [_run_job(j) for j in jobs]
    return max(codes)


def cmd_synth(args) -> int:
    try:
        raw, sc = _load(args.config[0], args.override, args.seed)
    except (cfgmod.ConfigError, ValueError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    if sc.ingredients.degenerate:
        print("degenerate terminal design (x_N = x^r_N); nothing to certify")
        return EXIT_OK
    box = error_box(sc.box, sc.reference)
    cert = certify_assumption5(sc.dyn, sc.cost, sc.ingredients, box, samples=1000, seed=sc.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_ingredients(sc.ingredients, out_dir / "ingredients.csv")
    (out_dir / "certificate.txt").write_text(str(cert) + "\n")
    print(f"tau={sc.ingredients.tau:.12e}")
    print(cert)
    return EXIT_OK if cert.passed else EXIT_FAIL


def cmd_verify(args) -> int:
    try:
        _, sc = _load(args.config[0], args.override, args.seed)
        rollout = RolloutLog.from_csv(args.log)
    except (cfgmod.ConfigError, ValueError, OSError) as exc:
        log.error("input error: %s", exc)
        return EXIT_CONFIG
    if rollout.x.shape[1] != sc.dyn.n or rollout.u.shape[1] != sc.dyn.m:
        log.error("log dimensions do not match the config")
        return EXIT_CONFIG
    report = sc.verify(rollout)
    print(report)
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_export_plots(args) -> int:
    from . import plotting

    try:
        raw, sc = _load(args.config[0], args.override, args.seed)
    except (cfgmod.ConfigError, ValueError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    try:
        rollout = RolloutLog.from_csv(args.log) if args.log else sc.run()
    except (ValueError, OSError) as exc:
        log.error("input error: %s", exc)
        return EXIT_CONFIG
    except InitialInfeasibility as exc:
        log.error("initial infeasibility: %s", exc)
        return EXIT_INITIAL
    except FilterError as exc:
        log.error("run aborted: %s", exc)
        return EXIT_RUNTIME
    Ts, state, inp, labels = _plot_options(raw)
    files = plotting.export(sc, rollout, args.out, Ts, state, inp, png=not args.no_png, labels=labels)
    for f in files:
        print(f)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stabfilter", description="Predictive safety filter with a stability constraint.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, many=False):
        p.add_argument("--config", action="append", required=True,
                       help="YAML config path or bundled config name" + (" (repeatable)" if many else ""))
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted config key, e.g. filter.zeta_min=0.5 (repeatable)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="overrides run.seed")
        p.add_argument("--jobs", type=int, default=1, help="parallel runs for several configs")

    p = sub.add_parser("run", help="closed-loop run, log and verification report")
    common(p, many=True)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("synth", help="terminal ingredients and their certificate")
    common(p)
    p.set_defaults(func=cmd_synth)
    p = sub.add_parser("verify", help="re-verify a stored log")
    common(p)
    p.add_argument("--log", required=True)
    p.set_defaults(func=cmd_verify)
    p = sub.add_parser("export-plots", help="figure CSVs and PNGs for a run")
    common(p)
    p.add_argument("--log", default=None, help="stored log; runs the config if omitted")
    p.add_argument("--no-png", action="store_true", help="CSV only")
    p.set_defaults(func=cmd_export_plots)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command != "run" and len(args.config) > 1:
        log.error("%s takes a single --config", args.command)
        return EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
