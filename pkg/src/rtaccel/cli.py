"""Command-line entry points.

    rtaccel run <config.json> [overrides]   benchmark suite -> CSVs + SVGs
    rtaccel oracle <config.json>            tiny-instance direct-solve check
    rtaccel plot <history.csv> [...]        regenerate a decay plot from CSVs

Exit code 0 on full success, 2 when any run failed or a check missed its
tolerance.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .benchmark import BenchmarkConfig, build_checkerboard, run_suite
from .solver import IterationConfig, dense_oracle, run

ORACLE_DOF_LIMIT = 5000


def _apply_overrides(cfg: BenchmarkConfig, args) -> BenchmarkConfig:
    if args.g is not None:
        cfg.g = list(args.g)
    if args.K is not None:
        cfg.K = list(args.K)
    if args.space is not None:
        cfg.spaces = list(args.space)
    if args.cells is not None or args.level is not None:
        meshes = []
        for cells, level in cfg.meshes:
            meshes.append((args.cells if args.cells is not None else cells,
                           args.level if args.level is not None else level))
        # collapsing duplicates keeps a single-mesh override single
        cfg.meshes = list(dict.fromkeys(meshes))
    if args.tol is not None:
        cfg.tol = args.tol
    if getattr(args, "out", None) is not None:
        cfg.out = args.out
    return cfg


def _add_override_flags(p: argparse.ArgumentParser):
    p.add_argument("--g", type=float, nargs="+", help="anisotropy values")
    p.add_argument("--K", type=int, nargs="+", help="eigenvector counts")
    p.add_argument("--space", nargs="+",
                   choices=["none", "wc", "tw1", "tw1m"],
                   help="subspace configurations")
    p.add_argument("--cells", type=int, help="spatial cells per side")
    p.add_argument("--level", type=int, help="angular refinement level")
    p.add_argument("--tol", type=float, help="outer stopping tolerance")


def cmd_run(args) -> int:
    cfg = _apply_overrides(BenchmarkConfig.load(args.config), args)
    report = run_suite(cfg)
    print(f"summary: {report.summary_path}")
    for line in report.rows:
        print("  " + line)
    for svg in report.svg_paths:
        print(f"plot: {svg}")
    if not report.ok:
        print(f"{report.failures} run(s) failed or did not converge",
              file=sys.stderr)
        return 2
    return 0


def cmd_oracle(args) -> int:
    cfg = _apply_overrides(BenchmarkConfig.load(args.config), args)
    cells, level = cfg.meshes[0]
    g = cfg.g[0]
    system = build_checkerboard(cfg, cells, level, g)
    ndof = system.load.size
    if ndof > ORACLE_DOF_LIMIT:
        print(f"instance has {ndof} dof (> {ORACLE_DOF_LIMIT}); override with "
              f"--cells/--level to get a tiny instance", file=sys.stderr)
        return 2
    exact = dense_oracle(system, limit=ORACLE_DOF_LIMIT)
    rho = system.rho
    tol = max(1e-12, 0.5e-7 * (1.0 - rho))
    hist = run(system, IterationConfig(space="none", tol=tol,
                                       max_iters=50000))
    err = system.weighted_norm(hist.solution - exact)
    res = hist.residuals[-1] if hist.residuals else hist.r0_norm
    bound = res / (1.0 - rho)
    print(f"dof={ndof} rho={rho:.9f} iterations={hist.iterations}")
    print(f"residual={res:.6e} bound={bound:.6e} error={err:.6e}")
    ok = hist.converged and err <= max(bound * (1 + 1e-6) + 1e-12, 1e-300) \
        and err <= 1e-7
    print("oracle check:", "ok" if ok else "FAILED")
    return 0 if ok else 2


def cmd_plot(args) -> int:
    from . import plotting

    out = Path(args.out) if args.out else Path(args.csv[0]).with_suffix(".svg")
    missing = [p for p in args.csv if not Path(p).exists()]
    if missing:
        print(f"missing input: {', '.join(missing)}", file=sys.stderr)
        return 2
    plotting.plot_histories(args.csv, out)
    print(f"plot: {out}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="rtaccel",
        description="Radiative transfer source iteration with subspace "
                    "residual minimization: benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a benchmark suite from a config")
    p_run.add_argument("config", help="JSON config file")
    _add_override_flags(p_run)
    p_run.add_argument("--out", help="output directory")
    p_run.set_defaults(func=cmd_run)

    p_or = sub.add_parser("oracle",
                          help="check the iteration against a direct solve "
                               "on a tiny instance")
    p_or.add_argument("config", help="JSON config file")
    _add_override_flags(p_or)
    p_or.set_defaults(func=cmd_oracle, out=None)

    p_pl = sub.add_parser("plot", help="render a decay SVG from history CSVs")
    p_pl.add_argument("csv", nargs="+", help="history CSV file(s)")
    p_pl.add_argument("--out", help="output SVG path")
    p_pl.set_defaults(func=cmd_plot)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
