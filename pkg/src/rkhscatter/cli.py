"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

import argparse
import logging
import os
import sys

import numpy as np

from . import harness
from .exceptions import (AccuracyError, ConfigError, DomainError, GeometryInfeasibleError,
                         InvalidArgumentError, MetricUndefinedError, SingularityError,
                         SolverError, StageError)
from .io import read_array

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

_CONFIG_ERRORS = (ConfigError, InvalidArgumentError, GeometryInfeasibleError)
_NUMERIC_ERRORS = (SolverError, AccuracyError, DomainError, SingularityError,
                   MetricUndefinedError, np.linalg.LinAlgError, FloatingPointError)


def _add_config_flags(parser):
    parser.add_argument("--config", help="config file ([section] key = value)")
    parser.add_argument("--output", "-o", default="run", help="run directory")
    group = parser.add_argument_group("experiment parameters (override the config file)")
    for name, (sec, key, hlp) in harness.field_names().items():
        flag = "--lambda" if name == "lam" else "--" + name.replace("_", "-")
        group.add_argument(flag, dest=f"cfg_{name}", default=None, metavar=key.upper(),
                           help=f"[{sec}] {hlp}")


def _config_from_args(args):
    base = harness.ExperimentConfig()
    if args.config:
        base = harness.load_config(args.config)
    sections = {}
    for name, (sec, key, _) in harness.field_names().items():
        val = getattr(args, f"cfg_{name}", None)
        if val is not None:
            sections.setdefault(sec, {})[key] = val
    return harness.config_from_sections(sections, base).validate()


def _cmd_stage(stage):
    def run(args):
        cfg = _config_from_args(args)
        harness.run_stages(cfg, args.output, (stage,))
        print(f"{stage}: wrote {args.output}")
        return EXIT_OK
    return run


def _cmd_metrics(args):
    cfg = _config_from_args(args)
    state = harness.run_stages(cfg, args.output, ("metrics",))
    for key, val in state.metrics.items():
        print(f"{key}={val}")
    return EXIT_OK


def _cmd_pipeline(args):
    cfg = _config_from_args(args)
    report = harness.run_pipeline(cfg, args.output)
    for key, val in report.metrics.items():
        print(f"{key}={val}")
    return EXIT_OK


def _cmd_sweep(args):
    cfg = _config_from_args(args)
    values = [v for v in args.values.split(",") if v.strip()]
    rows = harness.sweep(cfg, args.axis, values, args.output)
    print("value chi2 delta")
    for v, c, d in rows:
        print(f"{v} {c} {d}")
    return EXIT_OK


def _cmd_render(args):
    arr = read_array(args.input)
    rng = None
    if args.vmin is not None or args.vmax is not None:
        if args.vmin is None or args.vmax is None:
            raise ConfigError("--vmin and --vmax go together")
        rng = (args.vmin, args.vmax)
    out = args.out or os.path.splitext(args.input)[0] + f"_{args.layer:03d}.pgm"
    harness.render_slice(np.real(arr), args.layer, rng, out)
    print(f"render: wrote {out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rkhscatter",
        description="Simulate internal-source scattering data and reconstruct susceptibility.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "phantom": "build the phantom, sources and detectors",
        "forward": "simulate (noisy) scattering amplitudes",
        "fit": "fit the RKHS amplitude surrogate",
        "invert": "reconstruct the susceptibility",
        "metrics": "compute chi^2 and delta for a run directory",
        "pipeline": "run every stage",
        "sweep": "repeat the pipeline over sources, detectors or lambda",
    }
    for name, hlp in helps.items():
        p = sub.add_parser(name, help=hlp)
        _add_config_flags(p)
        if name == "sweep":
            p.add_argument("--axis", required=True, choices=sorted(harness.SWEEP_AXES))
            p.add_argument("--values", required=True, help="comma-separated values")
            p.set_defaults(func=_cmd_sweep)
        elif name == "pipeline":
            p.set_defaults(func=_cmd_pipeline)
        elif name == "metrics":
            p.set_defaults(func=_cmd_metrics)
        else:
            p.set_defaults(func=_cmd_stage(name))
    p = sub.add_parser("render", help="write one slice of an array file as a graymap")
    p.add_argument("input", help="array file (e.g. recon.scat)")
    p.add_argument("--layer", type=int, default=0)
    p.add_argument("--vmin", type=float)
    p.add_argument("--vmax", type=float)
    p.add_argument("--out", help="output .pgm path")
    p.set_defaults(func=_cmd_render)
    return parser


def _root_cause(exc):
    return exc.cause if isinstance(exc, StageError) else exc


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, StageError, InvalidArgumentError, GeometryInfeasibleError,
            *_NUMERIC_ERRORS, OSError) as exc:
        cause = _root_cause(exc)
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(cause, _NUMERIC_ERRORS):
            return EXIT_NUMERIC
        if isinstance(cause, (*_CONFIG_ERRORS, OSError)):
            return EXIT_CONFIG
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
