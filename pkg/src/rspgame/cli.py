"""Command-line entry point: ``rspgame <mode> [--config FILE] [--out DIR] ...``.

Exit codes: 0 success, 2 invalid input or a failed verification, 3 solver
failure (non-optimal status).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .equilibrium import OWN, SHARED, SolverFailure
from .experiments import (MODES, RUNNERS, ConfigError, ExperimentConfig, VerificationFailed,
                          build_instance, load_config, verify_solution_file)
from .serialize import InstanceMismatch, SolutionFormatError

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 2, 3


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rspgame", description=__doc__.splitlines()[0])
    ap.add_argument("mode", choices=MODES)
    ap.add_argument("--config", help="JSON experiment config (defaults are used when omitted)")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--q", type=_floats, help="q values, e.g. 0.05,0.25,0.5; one value sets the "
                    "instance q, several set the sweep grid")
    ap.add_argument("--capacity", type=float, help="per-RSP fleet size")
    ap.add_argument("--tol", type=float, help="relative deviation-gain tolerance")
    ap.add_argument("--seed", type=int, help="recorded only; solves are deterministic")
    ap.add_argument("--solution", help="solution JSON to check (verify mode)")
    ap.add_argument("--coupling", choices=(OWN, SHARED),
                    help="constraint set a deviating RSP must respect (verify mode)")
    ap.add_argument("--workers", type=int, help="parallel sweep points")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def configure(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg.mode = args.mode
    if args.out:
        cfg.output_dir = args.out
    if args.q:
        cfg.sweep = list(args.q)
        cfg.instance.q = args.q[0]
    if args.capacity is not None:
        cfg.instance.capacity = args.capacity
    if args.tol is not None:
        cfg.tol = args.tol
    if args.seed is not None:
        cfg.seed = args.seed
    if args.coupling:
        cfg.coupling = args.coupling
    if args.workers:
        cfg.workers = args.workers
    problems = cfg.validate()
    if problems:
        raise ConfigError("; ".join(problems))
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = configure(args)
        if cfg.mode == "verify":
            if not args.solution:
                raise ConfigError("verify mode needs --solution")
            # an explicitly configured instance must be the one the file was solved on
            explicit = args.config or args.capacity is not None or args.q
            instance = build_instance(cfg) if explicit else None
            report = verify_solution_file(args.solution, cfg, instance)
        else:
            result = RUNNERS[cfg.mode](cfg, cfg.output_dir)
            report = result.summary if cfg.mode == "sweep" else result
    except VerificationFailed as exc:
        print(json.dumps(exc.report, indent=1))
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ConfigError, SolutionFormatError, InstanceMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    if cfg.mode == "sweep":
        for p in report["points"]:
            print(f"q={p['q']:.2f}  status={p['residuals']['status']}  "
                  f"gain(own)={max(p['relative_gain_own']):.2e}  "
                  f"gain(shared)={max(p['relative_gain_shared']):.2e}")
        print(f"wrote {cfg.output_dir}/sweep.csv")
    else:
        print(json.dumps(report, indent=1))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
