"""Command-line entry point for the experiment harness.

Usage: ``ctrecover <experiment> [--config FILE] [--out DIR] [--seed N]
[--threads N] [--paper-scale]`` where the experiment is one of
phase-transition, convergence, robustness, noisy, ct.  Exit codes:
0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from .experiments import (
    EXPERIMENTS,
    ConfigError,
    ExperimentConfig,
    run_convergence,
    run_ct_reconstruction,
    run_noisy,
    run_phase_transition,
    run_robustness,
)
from .solvers import KappaCapExceeded, NumericalError
from .tv import GraphSolveError, TvProjectionError

_RUNNERS = {
    "phase-transition": run_phase_transition,
    "convergence": run_convergence,
    "robustness": run_robustness,
    "noisy": run_noisy,
    "ct": run_ct_reconstruction,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctrecover", description=__doc__)
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        s = sub.add_parser(name, help=f"run the {name} experiment")
        s.add_argument("--config", help="JSON config file (overrides defaults)")
        s.add_argument("--out", help="output directory for artifacts")
        s.add_argument("--seed", type=int, help="master seed")
        s.add_argument("--threads", type=int, help="worker threads for independent cells")
        s.add_argument("--paper-scale", action="store_true", help="full-size parameters")
    return parser


def _load_config(args) -> ExperimentConfig:
    raw: dict = {"experiment": args.experiment}
    if args.config:
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{args.config}: config must be a JSON object")
        if raw.get("experiment", args.experiment) != args.experiment:
            raise ConfigError(
                f"config is for {raw.get('experiment')!r} but the {args.experiment!r} subcommand was invoked"
            )
        raw["experiment"] = args.experiment
    if args.out is not None:
        raw["out_dir"] = args.out
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.threads is not None:
        raw["threads"] = args.threads
    if args.paper_scale:
        raw["paper_scale"] = True
    try:
        return ExperimentConfig(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        result = _RUNNERS[cfg.experiment](cfg)
    except (NumericalError, KappaCapExceeded, TvProjectionError, GraphSolveError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    printable = {k: v for k, v in result.items() if isinstance(v, (str, int, float, list))}
    print(json.dumps({"experiment": cfg.experiment, "config_sha256": cfg.config_hash(), **printable},
                     indent=2, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
