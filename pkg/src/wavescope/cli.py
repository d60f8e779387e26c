"""
Commandline Interface for wavescope.
All experiments are accessible by typing ``wavescope <command>`` after pip-installing this package.
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from wavescope import __version__
from wavescope.base import ConfigError, WavescopeError
from wavescope.experiments import COMMANDS, SCHEMA_VERSION, load_config, run_experiment
from wavescope.utils import resolve_dir, store_json

__license__ = "MIT"

module_logger = logging.getLogger(__name__)

COMMAND_HELP = {
    "simulate": "Solve the nonlinear wave equation for a boundary pulse and store the field.",
    "dn": "Compute the Dirichlet-to-Neumann trace of a boundary pulse.",
    "linearize": "Compare finite-difference mixed derivatives with the interaction cascade.",
    "gauge-check": "Check that gauge-equivalent media give the same DN trace under refinement.",
    "trace": "Trace a null bicharacteristic and report drift, boundary crossings and conjugate points.",
    "frames": "Construct a covector frame and report its residual.",
    "coeffs": "Evaluate interaction coefficients (I3, C, D) of a covector frame.",
    "recover": "Recover b, the gauge factor and beta2, beta3 from a hidden gauge-equivalent medium.",
    "time-independence": "Check the time-independence condition for a gauge factor.",
    "run": "Run the command named in the configuration file.",
}


def check_file(f):
    if not os.path.isfile(f):
        f = os.path.join(os.getcwd(), f)
        if not os.path.isfile(f):
            raise argparse.ArgumentTypeError(f"{f} needs to be an existing file")
    return Path(os.path.abspath(f))


def check_and_create(d) -> Path:
    """Turn input into a path, creating the directory if it doesn't exist."""
    try:
        d = resolve_dir(d)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from e
    d.mkdir(parents=True, exist_ok=True)
    return d


def experiment_cmd(args) -> int:
    if args.config is None:
        config = dict(schema_version=SCHEMA_VERSION)
    else:
        config = load_config(args.config)
    if args.action != "run" and isinstance(config, dict):
        configured = config.setdefault("command", args.action)
        if configured != args.action:
            raise ConfigError(
                f"Config is for {configured!r}, not {args.action!r}",
                [("/command", f"expected {args.action!r}, got {configured!r}")],
            )
    report = run_experiment(
        config,
        out_dir=args.out,
        grid_refine=args.grid_refine,
        seed=args.seed,
        strict=True if args.strict else None,
    )
    for name, value in sorted(report.metrics.items()):
        print(f"{name}: {value}")
    if report.failure is not None:
        print(f"FAILED in {report.failure['module']}: {report.failure['error']}: {report.failure['message']}")
    for assertion in report.assertions:
        if not assertion["passed"]:
            print(f"Assertion failed: {assertion['metric']} = {assertion['value']}")
    return 0 if report.passed else 1


def get_arg_parser():
    # reusable argument sets
    default_args = argparse.ArgumentParser(add_help=False)
    default_args.add_argument(
        "-c",
        "--config",
        metavar="PATH",
        type=check_file,
        help="JSON experiment configuration. Without it, the command's defaults are used.",
    )
    default_args.add_argument(
        "-o",
        "--out",
        metavar="OUT_DIR",
        type=check_and_create,
        help="Output directory for report.json, CSV tables and SVG plots.",
    )
    default_args.add_argument(
        "--grid-refine",
        metavar="N",
        type=int,
        default=0,
        help="Multiply all cell counts by 2^N.",
    )
    default_args.add_argument(
        "--seed",
        type=int,
        help="Seed for randomly sampled points. Overrides the configuration.",
    )
    default_args.add_argument(
        "--strict",
        action="store_true",
        help="Refuse time-dependent gauge factors when transforming media.",
    )
    default_args.add_argument(
        "-l",
        "--level",
        metavar="{c, e, w, i, d}",
        default="w",
        help="Choose how many log messages you want to see: c (none), e, w, i, d (maximum)",
    )

    # main argument parser
    parser = argparse.ArgumentParser(
        formatter_class=argparse.RawDescriptionHelpFormatter,
        description="""\
-----------------------
| Welcome to wavescope! |
-----------------------

The library offers you the following commands. Add the flag -h to one of them to learn about its parameters.
""",
    )
    parser.add_argument("--version", action="version", version=__version__)
    subparsers = parser.add_subparsers(help="The experiment that you want to run.", dest="action")
    for command in COMMANDS + ("run",):
        command_parser = subparsers.add_parser(command, help=COMMAND_HELP[command], parents=[default_args])
        command_parser.set_defaults(func=experiment_cmd)
    return parser


def resolve_level_param(level):
    LEVELS = {
        "DEBUG": logging.DEBUG,
        "INFO": logging.INFO,
        "WARNING": logging.WARNING,
        "ERROR": logging.ERROR,
        "CRITICAL": logging.CRITICAL,
        "NOTSET": logging.NOTSET,
        "D": logging.DEBUG,
        "I": logging.INFO,
        "W": logging.WARNING,
        "E": logging.ERROR,
        "C": logging.CRITICAL,
        "N": logging.NOTSET,
    }
    if isinstance(level, str):
        level = LEVELS[level.upper()]
    assert isinstance(level, int), f"Logging level needs to be an integer, not {level.__class__}"
    return level


def setup_logging(loglevel: str | int = logging.INFO):
    """Setup basic logging

    Args:
      loglevel (int): minimum loglevel for emitting messages
    """
    loglevel = resolve_level_param(loglevel)
    logformat = "%(levelname)-8s %(name)s -- %(pathname)s (line %(lineno)s) in %(funcName)s():\n\t%(message)s"
    logging.basicConfig(level=loglevel, stream=sys.stdout, format=logformat, datefmt="%Y-%m-%d %H:%M:%S")


def _record_config_error(error: ConfigError, out_dir: Optional[Path]):
    print(f"Configuration error: {error}")
    for pointer, message in error.errors:
        print(f"  {pointer or '/'}: {message}")
    if out_dir is not None:
        store_json(
            dict(
                schema_version=SCHEMA_VERSION,
                passed=False,
                failure=dict(error="ConfigError", module="wavescope.experiments", message=str(error)),
                config_errors=[dict(pointer=pointer, message=message) for pointer, message in error.errors],
            ),
            out_dir / "report.json",
        )


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments and run the experiment; returns 2 for configuration errors, 1 for failed runs."""
    parser = get_arg_parser()
    args = parser.parse_args(argv)
    if "func" not in args:
        parser.print_help()
        return 0
    setup_logging(args.level)
    module_logger.debug(f"Calling {args.func.__name__} with args={args}")
    try:
        return args.func(args)
    except ConfigError as e:
        _record_config_error(e, args.out)
        return 2
    except WavescopeError as e:
        print(f"{e.__class__.__name__}: {e}")
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
