"""Command-line entry point: ``vpp-fra simulate|generate|learn|assess|evaluate|report``.

Exit codes: 0 success, 1 invalid input, 2 solver failure, 3 learning loop
stopped without meeting its tolerance.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    HookViolation,
    MissingArtifact,
    NoProgress,
    ParseError,
    SolverError,
    ValidationError,
    VppFraError,
)

log = logging.getLogger("vppfra")

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_NO_PROGRESS = 0, 1, 2, 3
MANIFEST = "manifest.json"
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

# artifact names that ``report`` looks for, with the step that writes them
ARTIFACTS = {
    "params.json": "learn",
    "region_true.csv": "assess (without --params)",
    "region_est.csv": "assess --params params.json",
    "metrics.json": "evaluate",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Parser that reports bad flags through the exit-code contract instead of exiting."""

    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


# ---------------------------------------------------------------- manifest


def _digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, command: str, config: dict, inputs: list[Path], seed, seconds: float) -> Path:
    """Record one subcommand in the directory's single manifest file.

    Each subcommand keeps one entry; rerunning it replaces that entry.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / MANIFEST
    doc = {"tool": "vpp-fra", "version": __version__, "runs": {}}
    if path.exists():
        try:
            old = json.loads(path.read_text())
            doc["runs"] = dict(old.get("runs", {}))
        except ValueError:
            log.warning("replacing unreadable manifest %s", path)
    doc["runs"][command] = {
        "subcommand": command,
        "config": config,
        "inputs": {str(p): _digest(p) for p in inputs},
        "seed": seed,
        "version": __version__,
        "wall_seconds": round(seconds, 3),
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True))
    return path


def _config(args) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k != "func"}


# -------------------------------------------------------------- subcommands


def _load_vpp(path: Path):
    from .scenario import load_scenario

    return load_scenario(path)


def cmd_simulate(args) -> tuple[Path, list[Path]]:
    from .dispatch import dispatch

    vpp = _load_vpp(args.scenario)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    for mine in vpp.mines:
        sol = dispatch(mine)
        sol.to_csv(out / f"dispatch_{mine.id}.csv")
        log.info("mine %s: cost %.6g", mine.id, sol.objective_value)
    return out, [args.scenario]


def cmd_generate(args) -> tuple[Path, list[Path]]:
    from .datagen import generate_history, save_dataset

    vpp = _load_vpp(args.scenario)
    ds = generate_history(vpp, n=args.n, seed=args.seed, spread=args.spread, noise_sigma=args.noise, jobs=args.jobs)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, args.out)
    unc = ds.uncovered()
    if unc:
        log.warning("%d parameters never bind in the dataset: %s", len(unc), ", ".join(unc))
    return args.out.parent, [args.scenario]


def cmd_learn(args) -> tuple[Path, list[Path]]:
    from .datagen import load_dataset
    from .inverse import LfraConfig, ParameterVector, identification, lfra_run

    vpp = _load_vpp(args.scenario)
    ds = load_dataset(args.data)
    xi0 = ParameterVector.from_vpp(vpp).midpoint()
    cfg = LfraConfig(
        rho=args.rho,
        eps=args.eps,
        max_outer=args.max_outer,
        big_m_scale=args.big_m_scale,
        batch_size=args.batch_size,
        seed=args.seed,
        step_method=args.method,
        jobs=args.jobs,
    )
    trace_path = args.trace or args.out.with_name("trace.csv")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    failure = None
    try:
        xi, trace = lfra_run(vpp, ds, xi0, cfg)
    except NoProgress as e:
        xi, trace, failure = e.xi, e.trace, e
    xi.to_json(args.out, identification(vpp, ds, xi))
    trace.to_csv(trace_path)
    if failure is not None:
        # outputs hold the best iterate; the exit code flags non-convergence
        raise failure
    return args.out.parent, [args.scenario, args.data]


def cmd_assess(args) -> tuple[Path, list[Path]]:
    from .fra import assess_region, random_direction_support
    from .inverse import ParameterVector

    vpp = _load_vpp(args.scenario)
    params = None
    inputs = [args.scenario]
    if args.params is not None:
        params = ParameterVector.from_json(args.params)
        inputs.append(args.params)
        expected = ParameterVector.from_vpp(vpp, require_box=False).names
        if sorted(params.names) != sorted(expected):
            raise ValidationError("parameter file does not match the scenario's mines and conveyors")
    region = assess_region(vpp, params)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    region.to_csv(args.out)
    if args.directions:
        vals = random_direction_support(vpp, params, args.directions, args.seed)
        path = args.out.with_name(args.out.stem + "_directions.csv")
        with open(path, "w") as fh:
            fh.write("direction,support\n")
            for i, v in enumerate(vals):
                fh.write(f"{i},{float(v)!r}\n")
    log.info("peak-valley span %.6g kW", region.peak_valley)
    return args.out.parent, inputs


def cmd_evaluate(args) -> tuple[Path, list[Path]]:
    from .fra import RegionBounds, compare_regions, theta2_errors
    from .inverse import ParameterVector

    truth = RegionBounds.from_csv(args.true, "true")
    est = RegionBounds.from_csv(args.est, "surrogate")
    inputs = [args.true, args.est]
    t2 = None
    if (args.params is None) != (args.scenario is None):
        raise UsageError("--params and --scenario must be given together")
    if args.params is not None:
        est_xi = ParameterVector.from_json(args.params)
        true_xi = ParameterVector.from_vpp(_load_vpp(args.scenario), require_box=False)
        t2 = theta2_errors(est_xi.theta2(), true_xi.theta2())
        inputs += [args.params, args.scenario]
    metrics = compare_regions(est, truth, t2)
    doc = metrics.to_dict()
    if t2 is not None:
        doc["theta2_per_bc"] = t2
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(doc, indent=2, sort_keys=True))
    return args.out.parent, inputs


def _fmt(v) -> str:
    return "NaN" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.3f}"


def build_report(run_dir: Path) -> tuple[str, dict]:
    """Text and machine summaries of a finished run directory.

    Raises:
        MissingArtifact: some input file is absent; the message names the
            subcommand that produces it.
    """
    missing = [f"{name} (run {step})" for name, step in ARTIFACTS.items() if not (run_dir / name).exists()]
    if missing:
        raise MissingArtifact(f"{run_dir} lacks: " + "; ".join(missing))
    try:
        metrics = json.loads((run_dir / "metrics.json").read_text())
        params = json.loads((run_dir / "params.json").read_text())
    except ValueError as e:
        raise ParseError(f"cannot read run artifacts in {run_dir}: {e}") from None
    from .fra import RegionBounds

    est = RegionBounds.from_csv(run_dir / "region_est.csv")
    truth = RegionBounds.from_csv(run_dir / "region_true.csv", "true")
    rows = ["bc_max", "bc_min", "grid_max", "grid_min", "theta2"]
    labels = {}
    for entry in params.values():
        labels[entry.get("identified", "no")] = labels.get(entry.get("identified", "no"), 0) + 1
    t2 = metrics.get("theta2_per_bc")
    summary = {
        "metrics": {r: metrics.get(r) for r in rows},
        "theta2_max_error_pct": max(t2.values()) if t2 else None,
        "identified_counts": dict(sorted(labels.items())),
        "peak_valley_kw": {"true": truth.peak_valley, "estimate": est.peak_valley},
    }
    lines = [f"Run directory: {run_dir}", "", f"{'series':10s} {'RMSE %':>10s} {'MAE %':>10s}"]
    for r in rows:
        m = metrics.get(r)
        if m is None:
            lines.append(f"{r:10s} {'n/a':>10s} {'n/a':>10s}")
        else:
            lines.append(f"{r:10s} {_fmt(m['rmse_pct']):>10s} {_fmt(m['mae_pct']):>10s}")
    lines.append("")
    if t2:
        worst = max(t2, key=t2.get)
        lines.append(f"Largest conveyor coefficient error: {t2[worst]:.3f} % ({worst})")
    lines.append(f"Peak-valley span: true {truth.peak_valley:.1f} kW, estimate {est.peak_valley:.1f} kW")
    lines.append("Parameter labels: " + ", ".join(f"{k} {v}" for k, v in sorted(labels.items())))
    return "\n".join(lines) + "\n", summary


def cmd_report(args) -> tuple[Path, list[Path]]:
    text, summary = build_report(args.run_dir)
    (args.run_dir / "summary.txt").write_text(text)
    (args.run_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    sys.stdout.write(text)
    return args.run_dir, [args.run_dir / name for name in ARTIFACTS]


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vpp-fra", description="Feasible-region assessment of coal-mine virtual power plants.")
    p.add_argument("--version", action="version", version=f"vpp-fra {__version__}")
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=7, help="root seed for every random stream")
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="optimal dispatch of every mine")
    s.add_argument("--scenario", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("generate", parents=[common], help="history of dispatches under perturbed prices")
    s.add_argument("--scenario", type=Path, required=True)
    s.add_argument("--n", type=int, default=50)
    s.add_argument("--spread", type=float, default=0.3)
    s.add_argument("--noise", type=float, default=0.0, help="relative observation noise")
    s.add_argument("--out", type=Path, required=True, help="dataset CSV")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("learn", parents=[common], help="estimate the unknown parameters")
    s.add_argument("--scenario", type=Path, required=True)
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--rho", type=float, default=1.0)
    s.add_argument("--eps", type=float, default=1e-4)
    s.add_argument("--max-outer", type=int, default=50)
    s.add_argument("--big-m-scale", type=float, default=10.0)
    s.add_argument("--batch-size", type=int, default=None)
    s.add_argument("--method", choices=("auto", "milp", "local"), default="auto")
    s.add_argument("--trace", type=Path, default=None, help="trace CSV (default: trace.csv next to --out)")
    s.add_argument("--out", type=Path, required=True, help="parameter JSON")
    s.set_defaults(func=cmd_learn)

    s = sub.add_parser("assess", parents=[common], help="support bounds of the aggregate region")
    s.add_argument("--scenario", type=Path, required=True)
    s.add_argument("--params", type=Path, default=None, help="estimated parameters (default: scenario values)")
    s.add_argument("--directions", type=int, default=0, help="also sample this many random directions")
    s.add_argument("--out", type=Path, required=True, help="region CSV")
    s.set_defaults(func=cmd_assess)

    s = sub.add_parser("evaluate", parents=[common], help="error metrics of an estimated region")
    s.add_argument("--true", type=Path, required=True)
    s.add_argument("--est", type=Path, required=True)
    s.add_argument("--params", type=Path, default=None, help="estimated parameters, for coefficient errors")
    s.add_argument("--scenario", type=Path, default=None, help="true scenario, for coefficient errors")
    s.add_argument("--out", type=Path, required=True, help="metrics JSON")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("report", parents=[common], help="summarise a run directory")
    s.add_argument("run_dir", type=Path)
    s.set_defaults(func=cmd_report)
    return p


def _setup_logging() -> None:
    name = os.environ.get("VPP_FRA_LOG", "warn").lower()
    level = LOG_LEVELS.get(name, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    if name not in LOG_LEVELS:
        log.warning("unknown VPP_FRA_LOG value %r, using warn", name)


def _check_args(args) -> None:
    for flag in ("n", "max_outer", "batch_size", "jobs", "directions"):
        v = getattr(args, flag, None)
        if v is not None and v < (0 if flag == "directions" else 1):
            raise UsageError(f"--{flag.replace('_', '-')} must be positive")
    for flag in ("scenario", "data", "params", "true", "est"):
        v = getattr(args, flag, None)
        if isinstance(v, Path) and not v.exists():
            raise UsageError(f"--{flag}: file not found: {v}")


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    t0 = time.perf_counter()
    try:
        args = parser.parse_args(argv)
        _check_args(args)
        out_dir, inputs = args.func(args)
        write_manifest(out_dir, args.command, _config(args), inputs, getattr(args, "seed", None),
                       time.perf_counter() - t0)
        return EXIT_OK
    except UsageError as e:
        sys.stderr.write(f"vpp-fra: error: {e}\n")
        return EXIT_INPUT
    except NoProgress as e:
        sys.stderr.write(f"vpp-fra: {e}; best iterate written\n")
        return EXIT_NO_PROGRESS
    except SolverError as e:
        sys.stderr.write(f"vpp-fra: solver failure: {e}\n")
        return EXIT_SOLVER
    except (VppFraError, ValueError) as e:
        sys.stderr.write(f"vpp-fra: error: {e}\n")
        return EXIT_INPUT
    except OSError as e:
        sys.stderr.write(f"vpp-fra: error: {e}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
