"""Command line interface.

Subcommands:

    run          advance one configured case and write its artifacts
    convergence  execute a [convergence] study and print the rate table
    list-cases   show the registered benchmark cases

Exit codes map error categories: 0 success, 2 configuration problems,
3 numerical failures, 4 I/O failures (1 for anything uncategorised).
"""

import argparse
import sys

from .cases import CASES, case_names
from .config import load_config
from .errors import MoistDgError

__all__ = ["main", "build_parser"]


def build_parser():
    parser = argparse.ArgumentParser(
        prog="moistdg",
        description="2D discontinuous Galerkin simulator for moist "
                    "compressible atmospheric flow with warm rain")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one configured case")
    run.add_argument("--config", metavar="FILE",
                     help="INI configuration file (preset)")
    run.add_argument("--case", metavar="NAME",
                     help="case name when no file is given")
    run.add_argument("--set", metavar="SECTION.KEY=VALUE", action="append",
                     default=[], dest="overrides",
                     help="override one configuration value (repeatable)")
    run.add_argument("--restart", metavar="FILE",
                     help="resume from a checkpoint written by an "
                          "identically configured run")
    run.add_argument("--quiet", action="store_true",
                     help="suppress progress lines")

    conv = sub.add_parser("convergence",
                          help="run a mesh-refinement study")
    conv.add_argument("--config", metavar="FILE", required=True,
                      help="INI file with a [convergence] section")
    conv.add_argument("--set", metavar="SECTION.KEY=VALUE", action="append",
                      default=[], dest="overrides",
                      help="override one configuration value (repeatable)")
    conv.add_argument("--quiet", action="store_true",
                      help="suppress progress lines")

    sub.add_parser("list-cases", help="list the registered cases")
    return parser


def _progress(line):
    print(line, flush=True)


def _cmd_run(args):
    from .driver import run_case

    cfg = load_config(path=args.config, case_name=args.case,
                      overrides=args.overrides)
    result = run_case(cfg, progress=None if args.quiet else _progress,
                      restart_path=args.restart)
    final = result.summary.get("final_diagnostics") or {}
    print(f"completed {result.case}: {result.steps} steps to "
          f"t = {result.t:.6g} s in {result.wall_time:.1f} s "
          f"(backend {result.op.backend}); artifacts in "
          f"{result.output_dir}")
    if final:
        print(f"  max |u| = {final['max_speed']:.3e} m/s, "
              f"T in [{final['min_T']:.2f}, {final['max_T']:.2f}] K, "
              f"total fallout = {final['rain_fallout']:.6e}")
    return 0


def _cmd_convergence(args):
    from .convergence import convergence_study

    cfg = load_config(path=args.config, overrides=args.overrides)
    rows, csv_path = convergence_study(
        cfg, progress=None if args.quiet else _progress)
    names = sorted(key[len("err_"):] for key in rows[0]
                   if key.startswith("err_"))
    header = f"{'k':>3} {'nx':>6} {'h':>10}"
    for name in names:
        header += f" {'err_' + name:>13} {'rate_' + name:>10}"
    print(header)
    for row in rows:
        line = f"{row['k']:>3} {row['nx']:>6} {row['h']:>10.4g}"
        for name in names:
            rate = row[f"rate_{name}"]
            rate_s = "n/a" if rate != rate else f"{rate:.3f}"
            line += f" {row[f'err_{name}']:>13.6e} {rate_s:>10}"
        print(line)
    print(f"rate table written to {csv_path}")
    return 0


def _cmd_list_cases(_args):
    width = max(len(name) for name in CASES)
    for name in case_names():
        print(f"{name:<{width}}  {CASES[name].description}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"run": _cmd_run, "convergence": _cmd_convergence,
                "list-cases": _cmd_list_cases}
    try:
        return handlers[args.command](args)
    except MoistDgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
