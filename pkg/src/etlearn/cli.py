"""Command-line interface.

Subcommands:
    run <scenario>          execute a scenario, write the trace CSV + sidecar
    estimate-tau <scenario> print the model-implied mean stopping time and kappa
    kappa --eta --n --tau-max [--mode]   print a Hoeffding threshold
    validate <scenario>     schema-check a scenario file

Exit codes: 0 ok, 2 configuration error, 3 numerical error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional

import numpy as np

from .protocol import LockstepError
from .scenario import (
    ConfigError,
    builtin_scenario_path,
    default_out_path,
    emit_csv,
    load_scenario,
    run_scenario,
)
from .stopping import DiscretizationError, discretize_to_ou, mc_expected_stopping_time
from .sysid import InsufficientExcitationError
from .trigger import MODE_EXACT, kappa_approx, kappa_exact

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

_NUMERICAL_ERRORS = (
    DiscretizationError,
    InsufficientExcitationError,
    LockstepError,
    np.linalg.LinAlgError,
    ArithmeticError,
    RuntimeError,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="etlearn",
        description="Event-triggered state estimation with event-triggered model learning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a scenario and write the trace CSV")
    run_p.add_argument("scenario", help="scenario file path or builtin name (e.g. paper-sim)")
    run_p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run_p.add_argument("--out", default=None, help="output CSV path")

    est_p = sub.add_parser("estimate-tau", help="print the model-implied E[tau] and kappa")
    est_p.add_argument("scenario", help="scenario file path or builtin name")
    est_p.add_argument("--seed", type=int, default=None, help="override the scenario seed")

    kap_p = sub.add_parser("kappa", help="print a Hoeffding trigger threshold")
    kap_p.add_argument("--eta", type=float, required=True)
    kap_p.add_argument("--n", type=int, required=True)
    kap_p.add_argument("--tau-max", type=float, required=True)
    kap_p.add_argument("--mode", choices=["exact", "approx"], default="approx")

    val_p = sub.add_parser("validate", help="schema-check a scenario file")
    val_p.add_argument("scenario", help="scenario file path or builtin name")

    return parser


def _resolve_scenario(arg: str):
    import os

    if os.path.exists(arg):
        return load_scenario(arg)
    try:
        return load_scenario(builtin_scenario_path(arg))
    except ConfigError:
        raise ConfigError("scenario", f"no such file or builtin scenario: {arg}")


def main(argv: Optional[list] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)

    try:
        if args.command == "kappa":
            if not 0.0 < args.eta < 1.0:
                raise ConfigError("eta", "must lie in (0, 1)")
            fn = kappa_exact if args.mode == "exact" else kappa_approx
            print(f"{fn(args.eta, args.n, args.tau_max):.4f}")
            return EXIT_OK

        cfg = _resolve_scenario(args.scenario)
        if getattr(args, "seed", None) is not None:
            from dataclasses import replace

            cfg = replace(cfg, seed=args.seed)

        if args.command == "validate":
            print(f"{cfg.name}: ok (schema 1, {cfg.system.n} states, "
                  f"{len(cfg.events)} events, duration {cfg.duration}s)")
            return EXIT_OK

        if args.command == "estimate-tau":
            rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
            ou = discretize_to_ou(
                cfg.initial_model.a_cl, cfg.initial_model.sigma, cfg.system.Ts, cfg.delta
            )
            est = mc_expected_stopping_time(
                ou, cfg.trigger.sim_samples, cfg.trigger.tau_max, rng
            )
            eff_n = int(cfg.trigger.window) if cfg.trigger.window_mode == "count" else None
            kappa = cfg.trigger.threshold(effective_n=eff_n or 0)
            print(f"E[tau] = {est.mean:.4f} s  (M = {est.sample_count})")
            print(f"kappa  = {kappa:.4f} s  "
                  f"({'certified' if cfg.trigger.kappa_is_certified else 'user override'}, "
                  f"mode {cfg.trigger.mode})")
            return EXIT_OK

        if args.command == "run":
            trace = run_scenario(cfg)
            out = args.out if args.out else default_out_path(cfg)
            emit_csv(trace, out)
            n_events = int(np.nansum(trace.gamma_state))
            print(f"{cfg.name}: {trace.steps()} steps, {n_events} state updates, "
                  f"{len(trace.episodes)} learning episodes -> {out}")
            return EXIT_OK

        parser.error(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
