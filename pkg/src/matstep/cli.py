"""Command-line entry point.

Subcommands:
  validate <config>   check a config and print the resolved certificates
  stepsize <config>   print the stepsize certificates as JSON
  run <config>        run all configured methods/seeds and write traces
  plot <spec.json>    render figures (requires the matstep-plots package)

Exit codes: 0 ok, 2 config error, 3 inadmissible stepsize.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import harness
from .harness import ConfigError
from .stepsize import InadmissibleStepsize

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INADMISSIBLE = 3


def _certificates(cfg) -> list[dict]:
    problem = harness.build_problem(cfg)
    plans = harness.prepare_methods(cfg, problem)
    return [plan.spec.certificate for plan in plans]


def cmd_validate(args) -> int:
    cfg = harness.load_config(args.config)
    certs = _certificates(cfg)
    print(f"ok: {len(certs)} method(s), config hash {cfg.hash()}")
    return EXIT_OK


def cmd_stepsize(args) -> int:
    cfg = harness.load_config(args.config)
    print(json.dumps(_certificates(cfg), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = harness.load_config(args.config)
    traces = harness.run_experiment(cfg)
    written = harness.write_outputs(cfg, traces)
    for path in written:
        print(path)
    return EXIT_OK


def cmd_plot(args) -> int:
    try:
        from matstep_plots import render_file
    except ImportError:
        print("plotting requires the matstep-plots package (see plotting/)", file=sys.stderr)
        return EXIT_CONFIG
    for path in render_file(args.spec):
        print(path)
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="matstep", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("validate", cmd_validate), ("stepsize", cmd_stepsize), ("run", cmd_run)):
        sp = sub.add_parser(name)
        sp.add_argument("config")
        sp.set_defaults(fn=fn)
    sp = sub.add_parser("plot")
    sp.add_argument("spec")
    sp.set_defaults(fn=cmd_plot)
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InadmissibleStepsize as exc:
        print(f"inadmissible stepsize: {exc}", file=sys.stderr)
        return EXIT_INADMISSIBLE


if __name__ == "__main__":
    sys.exit(main())
