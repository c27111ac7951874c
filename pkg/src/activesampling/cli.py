"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 method precondition
failure, 4 oracle failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, OracleFailure, PreconditionError
from .harness.config import KEYS, RunConfig, load_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PRECONDITION = 3
EXIT_ORACLE = 4

log = logging.getLogger("activesampling")


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, which matches the config code
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file; flags below override it")
    for key in KEYS:
        p.add_argument("--" + key.replace("_", "-"), dest="kv_" + key, metavar="VALUE")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--meta", help="metadata JSON path (default: <out>.meta.json)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="activesampling", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate-data", help="write a synthetic population as CSV")
    g.add_argument("--sigma", type=float, default=0.1)
    g.add_argument("--r2", type=float, default=0.5)
    g.add_argument("--scenario", default="positive", choices=["positive", "zero_mean"])
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    r = sub.add_parser("run-experiment", help="eRMSE table for one or more methods")
    _add_experiment_flags(r)
    c = sub.add_parser("coverage", help="confidence interval coverage table")
    _add_experiment_flags(c)

    pl = sub.add_parser("pilot", help="sample size from a pilot sample")
    pl.add_argument("--data", required=True, help="CSV with a 'y' column")
    pl.add_argument("--delta", type=float, required=True, help="target standard error")
    return parser


def _run_config(args) -> RunConfig:
    overrides = {
        key: getattr(args, "kv_" + key)
        for key in KEYS
        if getattr(args, "kv_" + key) is not None
    }
    return load_config(args.config, overrides)


def _write_outputs(table, args) -> None:
    table.to_csv(args.out)
    table.write_meta(args.meta or str(args.out) + ".meta.json")


def cmd_generate(args) -> int:
    from .harness.synthetic import SyntheticSpec, generate_synthetic

    try:
        spec = SyntheticSpec(sigma=args.sigma, r2=args.r2, scenario=args.scenario, n=args.n, seed=args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    pop = generate_synthetic(spec)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "z", "y", "p"])
        for i, (z, y, p) in enumerate(zip(pop.auxiliaries[:, 0], pop.outcomes["y"], pop.weights)):
            w.writerow([i, repr(float(z)), repr(float(y)), repr(float(p))])
    print(f"wrote {pop.size} rows to {args.out} (realized R^2 {pop.info['realized_r2']:.4f})")
    return EXIT_OK


def _finish(table, args) -> int:
    _write_outputs(table, args)
    print(f"wrote {len(table.rows)} rows to {args.out}")
    for err in table.errors:
        print(f"precondition failure: {err['method']}: {err['error']}", file=sys.stderr)
    return EXIT_PRECONDITION if table.errors else EXIT_OK


def cmd_run(args) -> int:
    from .harness.benchmark import run_experiments

    cfg = _run_config(args)
    pop = cfg.build_population()
    table = run_experiments(pop, cfg.experiment, cfg.methods)
    return _finish(table, args)


def cmd_coverage(args) -> int:
    from dataclasses import replace

    from .harness.benchmark import ResultTable, run_coverage

    cfg = _run_config(args)
    pop = cfg.build_population()
    table = ResultTable()
    for m in cfg.methods:
        table.extend(run_coverage(pop, replace(cfg.experiment, method=m), cfg.variance_methods))
    return _finish(table, args)


def cmd_pilot(args) -> int:
    from .loop import pilot_sample_size, pilot_variance

    try:
        with open(args.data, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read pilot data: {exc}") from None
    if not rows or "y" not in rows[0]:
        raise ConfigError("pilot data needs a 'y' column")
    try:
        y = np.array([float(r["y"]) for r in rows])
    except ValueError as exc:
        raise ConfigError(f"bad pilot value: {exc}") from None
    if y.size < 2:
        raise ConfigError("pilot data needs at least two rows")
    if not args.delta > 0:
        raise ConfigError("delta must be positive")
    print(pilot_sample_size(pilot_variance(y), args.delta))
    return EXIT_OK


COMMANDS = {
    "generate-data": cmd_generate,
    "run-experiment": cmd_run,
    "coverage": cmd_coverage,
    "pilot": cmd_pilot,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PreconditionError as exc:
        print(f"precondition failure: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except OracleFailure as exc:
        print(f"oracle failure: {exc}", file=sys.stderr)
        return EXIT_ORACLE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
