"""Command-line entry point.

One orchestration per invocation: parse and validate the config, build the
problem, dispatch on the mode, emit tables + JSON summary + figures into
the output directory, and exit 0 only if every enabled property check
passed.  Output directory precedence: --out-dir flag, then the
FKVSIM_OUT_DIR environment variable, then the config's outputs block.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, reports
from .analysis import epsilon_sweep, manufactured_convergence, positivity_test, \
    uniqueness_check
from .config import RunConfig, parse_config
from .energy import continuous_margin, discrete_energy_audit, initial_continuity_check
from .errors import ConfigError, FkvError, MovingCrackError
from .kernel import kernel_table
from .stepper import check_generalized_residual, default_test_family

OUT_DIR_ENV = "FKVSIM_OUT_DIR"

# pass/fail thresholds of the enabled property checks (relative to the
# documented scale of each quantity)
EQUALITY_RTOL = 1e-8
MARGIN_RTOL = 1e-10
SIGN_RTOL = 1e-12
POSITIVITY_RTOL = 1e-10
UNIQUENESS_RTOL = 1e-10
IDENTITY_RATIO_MIN = 1.5
WAVE_ORDER_MIN = 0.8
EXACT_CASE_TOL = 1e-10


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fkvsim",
        description="viscoelastic wave solver with power-law memory on "
                    "cracked domains: runs, sweeps, and certificates")
    parser.add_argument("config", help="path to the YAML run configuration")
    parser.add_argument("--mode", choices=("run", "sweep", "convergence",
                                           "uniqueness", "positivity"),
                        help="override the config's mode")
    parser.add_argument("--out-dir", help="output directory (overrides config and "
                                          f"the {OUT_DIR_ENV} variable)")
    parser.add_argument("--workers", type=int, default=1,
                        help="parallel runs in sweep mode")
    parser.add_argument("--seed", type=int, default=0,
                        help="seed for randomized audit vectors")
    parser.add_argument("--strict", dest="strict", action="store_true", default=True,
                        help="reject unknown config keys (default)")
    parser.add_argument("--no-strict", dest="strict", action="store_false",
                        help="downgrade unknown config keys to warnings")
    parser.add_argument("--version", action="version", version=f"fkvsim {__version__}")
    args = parser.parse_args(argv)

    try:
        config = parse_config(args.config, strict=args.strict)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 2
    if args.mode:
        config.mode = args.mode
    for w in config.warnings:
        print(f"warning: {w}", file=sys.stderr)

    out_dir = args.out_dir or os.environ.get(OUT_DIR_ENV) \
        or config.outputs["directory"]
    try:
        return execute(config, out_dir, workers=args.workers, seed=args.seed)
    except MovingCrackError as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return 2
    except (FkvError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def execute(config: RunConfig, out_dir, workers: int = 1, seed: int = 0) -> int:
    """Run one orchestration; writes artifacts and returns the exit status."""
    t_start = time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    problem = config.build()

    dispatch = {"run": _mode_run, "sweep": _mode_sweep,
                "convergence": _mode_convergence, "uniqueness": _mode_uniqueness,
                "positivity": _mode_positivity}
    checks, payload = dispatch[config.mode](config, problem, out, seed, workers)

    meta = {"config_hash": config.config_hash,
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "wall_time_s": time.perf_counter() - t_start}
    ok = all(c["pass"] for c in checks.values())
    payload.update({"mode": config.mode, "checks": checks, "passed": ok})
    reports.write_json(out / "summary.json", meta, payload)
    for name, c in checks.items():
        print(f"[{'PASS' if c['pass'] else 'FAIL'}] {name}: "
              f"{c['value']:.3e} (threshold {c['threshold']:.3e})")
    print(f"artifacts in {out}  (config {config.config_hash})")
    return 0 if ok else 1


def _meta(config: RunConfig) -> dict:
    return {"config_hash": config.config_hash,
            "timestamp": datetime.now(timezone.utc).isoformat()}


def _check(value: float, threshold: float, sense: str) -> dict:
    ok = value >= threshold if sense == "min" else value <= threshold
    return {"value": float(value), "threshold": float(threshold),
            "sense": sense, "pass": bool(ok)}


def _mode_run(config, problem, out, seed, workers):
    traj = problem.solve(config.n, deterministic=config.deterministic)
    ks = traj.ctx.ks
    ledger = discrete_energy_audit(traj, ks)
    gap_u, gap_v = initial_continuity_check(traj)
    residual = check_generalized_residual(traj, default_test_family(traj))
    meta = _meta(config)

    stride = int(config.outputs["snapshot_stride"])
    steps = list(range(0, traj.n + 1, stride))
    if steps[-1] != traj.n:
        steps.append(traj.n)
    snap_cols = {"step": np.array(steps, dtype=float),
                 "t": np.array([traj.tau * j for j in steps])}
    for d in range(traj.u.shape[1]):
        snap_cols[f"dof{d}"] = np.array([traj.u_at(j)[d] for j in steps])
    reports.write_table(out / "snapshots.dat", meta, snap_cols)
    reports.write_table(out / "energy.dat", meta, ledger.columns())

    table = kernel_table(problem.kernel, config.n, config.t_final) \
        if problem.kernel is not None else None
    if table is not None:
        reports.write_table(out / "kernel.dat", meta, table)

    checks = {
        "energy_equality_residual": _check(ledger.max_relative_residual(),
                                           EQUALITY_RTOL, "max"),
        "energy_margin": _check(ledger.min_margin(), -MARGIN_RTOL * ledger.scale, "min"),
        "sign_ledger": _check(min(ledger.sign_violations().values()),
                              -SIGN_RTOL * ledger.scale, "min"),
        "kernel_certificates": _check(max(ks.sign_margins().values()),
                                      SIGN_RTOL, "max"),
    }
    if problem.kernel is not None:
        cm = continuous_margin(traj, problem.kernel, problem.data, traj.n)
        checks["continuous_margin"] = _check(cm, -1e-6 * ledger.scale, "min")

    payload = {
        "steps": traj.n,
        "tau": traj.tau,
        "dofs": traj.u.shape[1],
        "factorizations": traj.ctx.factorization_count,
        "initial_continuity": {"displacement": gap_u, "velocity": gap_v},
        "generalized_residual": residual,
        "min_margin": ledger.min_margin(),
        "max_equality_residual": ledger.max_relative_residual() * ledger.scale,
        "scale": ledger.scale,
    }
    if config.outputs["figures"]:
        reports.energy_figure(ledger, out / "energy.png")
        reports.snapshot_figure(traj, problem.mesh, out / "snapshots.png")
        if table is not None:
            reports.kernel_figure(table, out / "kernel.png")
    return checks, payload


def _mode_sweep(config, problem, out, seed, workers):
    blk = config.mode_block()
    rep = epsilon_sweep(problem, float(blk["eps0"]), int(blk["levels"]),
                        config.n, workers=workers)
    meta = _meta(config)
    reports.write_table(out / "sweep.dat", meta, {
        "epsilon": rep.epsilons[:-1],
        "diff_uH": rep.diffs_uH,
        "diff_strain": rep.diffs_strain,
        "margin": rep.energy_margins[:-1],
    })
    decrease = float(np.max(rep.diffs_uH[1:] / rep.diffs_uH[:-1])) \
        if len(rep.diffs_uH) > 1 else 0.0
    checks = {"sweep_strictly_decreasing": _check(decrease, 1.0 - 1e-12, "max"),
              "sweep_margins": _check(float(rep.energy_margins.min()),
                                      -MARGIN_RTOL, "min")}
    payload = {"epsilons": rep.epsilons, "diffs_uH": rep.diffs_uH,
               "diffs_strain": rep.diffs_strain, "n": rep.n}
    if config.outputs["figures"]:
        reports.sweep_figure(rep, out / "sweep.png")
    return checks, payload


def _mode_convergence(config, problem, out, seed, workers):
    blk = config.mode_block()
    case = blk["case"]
    ladder = tuple(int(v) for v in blk.get("ladder", (100, 200, 400)))
    rep = manufactured_convergence(case, ladder)
    meta = _meta(config)
    reports.write_table(out / "convergence.dat", meta, {
        "n": rep.grid_sizes.astype(float),
        "error": rep.errors,
    })
    if case == "wave":
        checks = {"observed_order": _check(rep.observed_order, WAVE_ORDER_MIN, "min")}
    else:
        checks = {"exactness": _check(float(rep.errors.max()), EXACT_CASE_TOL, "max")}
    payload = {"case": case, "ns": rep.grid_sizes, "errors": rep.errors,
               "rates": rep.rates}
    if config.outputs["figures"]:
        reports.convergence_figure(rep, out / "convergence.png")
    return checks, payload


def _mode_uniqueness(config, problem, out, seed, workers):
    blk = config.mode_block()
    variant = blk.get("variant", "permuted")
    rep = uniqueness_check(problem, config.n, variant=variant, seed=seed or 1,
                           linear_tol=blk.get("linear_tol"))
    meta = _meta(config)
    reports.write_table(out / "uniqueness.dat", meta, {
        "step": np.arange(len(rep.step_diffs), dtype=float),
        "diff_H": rep.step_diffs,
    })
    checks = {"uniqueness_max_rel_diff": _check(rep.max_rel_diff,
                                                UNIQUENESS_RTOL, "max")}
    payload = {"variant": rep.variant, "max_rel_diff": rep.max_rel_diff,
               "solution_scale": rep.solution_scale}
    if config.outputs["figures"]:
        reports.uniqueness_figure(rep.step_diffs, out / "uniqueness.png")
    return checks, payload


def _mode_positivity(config, problem, out, seed, workers):
    blk = config.mode_block()
    rep = positivity_test(problem.kernel, int(blk["n_max"]),
                          t_final=config.t_final, seed=seed)
    meta = _meta(config)
    reports.write_table(out / "positivity.dat", meta, {
        "n": rep.grid_sizes.astype(float),
        "min_eig": rep.min_eigs,
        "norm": rep.norms,
    })
    checks = {
        "positivity_worst_ratio": _check(rep.worst_ratio, -POSITIVITY_RTOL, "min"),
        "identity_two_resolution_ratio": _check(rep.identity_ratio,
                                                IDENTITY_RATIO_MIN, "min"),
    }
    payload = {"ns": rep.grid_sizes, "min_eigs": rep.min_eigs, "norms": rep.norms,
               "identity_residuals": list(rep.identity_residuals)}
    if config.outputs["figures"]:
        reports.positivity_figure(rep, out / "positivity.png")
    return checks, payload


if __name__ == "__main__":
    sys.exit(main())
