"""Command-line front end.

Subcommands:
    plan            run the continuous steering pipeline (through density
                    realization) from a scenario config
    steer-ensemble  same pipeline with the discrete agent ensemble enabled
    realize         realize a single moment vector as a density CSV
    report          rebuild figures from an existing bundle

Exit codes: 0 success, 1 usage or runtime error, 2 infeasible scenario.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .config import ConfigError, ScenarioConfig, parse_config
from .planner import InfeasibleError
from .realize import (ConvergenceError, build_grid, fallback_reference,
                      default_reference, realize_control, write_density_csv)

USAGE_ERROR = 1
INFEASIBLE = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


def _load_config(args) -> ScenarioConfig:
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        overrides[key.strip()] = value.strip()
    if args.output_dir:
        overrides["output_dir"] = args.output_dir
    with open(args.config, encoding="utf-8") as fh:
        return parse_config(fh.read(), overrides)


def _cmd_plan(args) -> int:
    cfg = _load_config(args)
    if args.command == "steer-ensemble":
        cfg.ensemble = True
    from .runner import run_scenario

    result = run_scenario(cfg)
    steering = result.plan
    print(f"waiting steps: {steering.waiting_steps}")
    print(f"omega: {np.array2string(steering.omega, precision=6)}")
    print(f"total energy: {steering.total_energy:.6f}")
    print(f"bundle: {len(result.files)} files in {cfg.output_dir}")
    return 0


def _cmd_realize(args) -> int:
    moments = np.asarray([float(v) for v in args.moments.split(",")])
    if args.reference == "cauchy":
        ref = fallback_reference(moments)
    elif args.reference == "gaussian":
        ref = default_reference(moments)
    else:
        ref = None
    grid = None
    if ref is not None:
        grid = build_grid(ref, args.panels, args.nodes, args.halfwidth)
    est, result = realize_control(moments, ref, tol=args.tol, grid=grid)
    write_density_csv(est, args.output)
    print(f"reference: {type(est.reference).__name__}")
    print(f"iterations: {result.iterations}")
    print(f"gradient norm: {result.gradient_norm:.3e}")
    print(f"density: {args.output}")
    return 0


def _cmd_report(args) -> int:
    from .runner import emit_plot_data

    files = emit_plot_data(args.bundle)
    for path in files:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="momentsteer",
                     description="moment-space distribution steering")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, text in (("plan", "continuous steering through realization"),
                       ("steer-ensemble", "steering plus discrete ensemble")):
        p = sub.add_parser(name, help=text)
        p.add_argument("config", help="scenario config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        p.add_argument("--output-dir", help="override the bundle directory")
        p.set_defaults(func=_cmd_plan)

    p = sub.add_parser("realize", help="realize one moment vector")
    p.add_argument("--moments", required=True,
                   help="comma-separated raw moments m1..m2n")
    p.add_argument("--output", required=True, help="density CSV path")
    p.add_argument("--reference", choices=("auto", "gaussian", "cauchy"),
                   default="auto")
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--panels", type=int, default=32)
    p.add_argument("--nodes", type=int, default=64)
    p.add_argument("--halfwidth", type=float, default=12.0)
    p.set_defaults(func=_cmd_realize)

    p = sub.add_parser("report", help="rebuild figures from a bundle")
    p.add_argument("bundle", help="bundle directory")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else USAGE_ERROR
    try:
        return args.func(args)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return INFEASIBLE
    except ConvergenceError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return INFEASIBLE
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
