"""Command-line entry point: ``pdmp-fluct <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 numerical invariant
breach, 4 blow-up monitor.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import experiments
from .config import ConfigError, ExperimentConfig, default_config, load_config, parse_epsilons
from .fluctuation import ConditioningError, ConsistencyError
from .kinetics import IrreducibilityError
from .pdmp import BlowUpError, MajorantError
from .seeding import check_seed

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3
EXIT_BLOWUP = 4

COMMANDS = {
    "simulate": experiments.run_simulate,
    "sweep": experiments.run_epsilon_sweep,
    "clt": experiments.run_clt_check,
    "trace": experiments.run_trace_series,
    "phi-check": experiments.run_phi_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pdmp-fluct", description="Slow-fast stochastic cable experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "write trajectory CSVs for every eps and replica",
        "sweep": "mean sup-distance to the averaged path over an eps grid",
        "clt": "frozen-voltage Green-Kubo variance check",
        "trace": "trace of the fluctuation covariance along the averaged path",
        "phi-check": "cross-validate corrector representations and closed forms",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", help="config file (default: packaged Morris-Lecar scenario)")
        p.add_argument("--seed", help="master seed, unsigned 64-bit (fallback: $PDMP_SEED)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--replicas", help="replica count")
        p.add_argument("--epsilon", help="comma-separated eps list; 'averaged' means eps = 0")
    return parser


def resolve_config(args, environ=os.environ) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else default_config()
    changes = {}
    seed = args.seed if args.seed is not None else environ.get("PDMP_SEED")
    try:
        if seed is not None:
            changes["seed"] = check_seed(int(seed))
        if args.replicas is not None:
            changes["replicas"] = int(args.replicas)
        if args.epsilon is not None:
            changes["epsilons"] = parse_epsilons(args.epsilon)
    except ValueError as exc:
        raise ConfigError(f"bad command-line value: {exc}", source="command line") from None
    if args.out is not None:
        changes["out_dir"] = args.out
    if changes:
        try:
            cfg = cfg.replace(**changes)
        except ConfigError as exc:
            raise ConfigError(exc.message, source="command line", key=exc.key) from None
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        report = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowUpError as exc:
        print(f"blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except (experiments.InvariantBreach, MajorantError, ConsistencyError, ConditioningError, IrreducibilityError) as exc:
        print(f"invariant breach: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    _summarise(args.command, report)
    return EXIT_OK


def _summarise(command: str, report) -> None:
    if command == "simulate":
        print(f"wrote {len(report.files)} trajectories")
    elif command == "sweep":
        for e, m, s in zip(report.epsilons, report.mean_sup_err, report.stderr):
            print(f"eps={e:g}  mean sup error {m:.6g} +- {s:.3g}")
        print(f"wrote {report.path}")
    elif command == "clt":
        print(f"wrote {report.path} ({len(report.rows)} rows)")
    elif command == "trace":
        print(f"max trace {float(report.trace.max()):.6g}, bound {report.bound:.6g}")
        print(f"wrote {report.csv_path} and {report.svg_path}")
    else:
        print(f"all {len(report.rows)} corrector checks passed; wrote {report.path}")


if __name__ == "__main__":
    sys.exit(main())
