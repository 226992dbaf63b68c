"""Command line entry point: train surrogates, run single experiments, sweep."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from floatfarm.experiment import (
    DEFAULT_TRAINING_STEPS,
    MODEL_DIR_ENV,
    SWEEP_AXES,
    ExperimentSpec,
    export_run,
    load_or_train_models,
    model_directory,
    run_closed_loop,
    save_models,
    sweep,
    train_models,
    write_sweep,
)
from floatfarm.farm import ConfigurationError, make_row_farm

log = logging.getLogger("floatfarm")


def _model_base(args) -> Path:
    return Path(args.model_dir or os.environ.get(MODEL_DIR_ENV, ".model_cache"))


def cmd_train(args) -> int:
    models = train_models(make_row_farm(args.farm_size), args.steps, args.seed)
    out = model_directory(_model_base(args), args.farm_size, args.steps, args.seed)
    save_models(models, out)
    for i, m in enumerate(models):
        print(f"turbine {i}: validation loss {m.validation_loss:.5f}")
    print(f"models written to {out}")
    return 0


def cmd_run(args) -> int:
    spec = ExperimentSpec(
        n_turbines=args.farm_size, sigma=args.sigma / 100.0, duration=args.duration, mode=args.mode,
        wind_seed=args.seed, controller_seed=args.seed, training_seed=args.training_seed,
        training_steps=args.steps,
    )
    greedy = run_closed_loop(replace(spec, mode="greedy"))
    if args.mode == "greedy":
        result, reference = greedy, None
    else:
        models = load_or_train_models(spec.n_turbines, spec.training_steps, spec.training_seed, _model_base(args))
        result, reference = run_closed_loop(spec, models), greedy
    export_run(result, args.out, reference)
    print(f"energy {result.energy / 3.6e9:.4f} MWh")
    if reference is not None:
        print(f"greedy {reference.energy / 3.6e9:.4f} MWh, gain {100 * (result.energy / reference.energy - 1):.2f}%")
    return 0


def cmd_sweep(args) -> int:
    template = ExperimentSpec(
        sigma=args.sigma / 100.0, duration=args.duration, wind_seed=args.seed, controller_seed=args.seed,
        training_seed=args.training_seed, training_steps=args.steps,
    )
    points = sweep(template, args.axis, _model_base(args), args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_sweep(points, out / f"sweep_{args.axis}.csv")
    for p in points:
        print(f"{args.axis}={p.point}: gain {p.gain:.2f}%  conflicts {p.conflict_rate:.2f}  {p.error}")
    return 1 if any(p.error for p in points) else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="floatfarm", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--model-dir", default=None, help=f"surrogate cache (default ${MODEL_DIR_ENV} or .model_cache)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--steps", type=int, default=DEFAULT_TRAINING_STEPS, help="training samples")
        p.add_argument("--training-seed", type=int, default=0)

    p = sub.add_parser("train", help="generate data and fit one surrogate per turbine")
    p.add_argument("--farm-size", type=int, default=2)
    p.add_argument("--steps", type=int, default=DEFAULT_TRAINING_STEPS)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="one closed-loop run, exported as CSV/JSON")
    p.add_argument("--mode", choices=("greedy", "dempc"), default="dempc")
    p.add_argument("--farm-size", type=int, default=2)
    p.add_argument("--sigma", type=float, default=5.0, help="wind perturbation bound, percent")
    p.add_argument("--duration", type=float, default=3600.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="paired greedy/DEMPC runs along one axis")
    p.add_argument("--axis", choices=sorted(SWEEP_AXES), required=True)
    p.add_argument("--sigma", type=float, default=5.0, help="percent, for the size axis")
    p.add_argument("--duration", type=float, default=3600.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
