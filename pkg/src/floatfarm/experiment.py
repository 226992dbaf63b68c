"""Closed-loop greedy vs DEMPC runs, energy accounting and result export."""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from floatfarm.dempc import AgentRecord, ControllerConfig, DistributedController
from floatfarm.farm import GREEDY_INPUT, ConfigurationError, FarmConfig, TurbineInput, make_row_farm
from floatfarm.simulator import FarmSimulator, FarmState
from floatfarm.surrogate import (
    SETTLE_TIME,
    SurrogateModel,
    generate_training_data,
    settle_greedy,
    train_network,
)
from floatfarm.wind import WindConfig, WindSeries, generate_wind_series

log = logging.getLogger(__name__)

MODES = ("greedy", "dempc")
DEFAULT_TRAINING_STEPS = 20_000
WORKERS_ENV = "FLOATFARM_WORKERS"
MODEL_DIR_ENV = "FLOATFARM_MODEL_DIR"


@dataclass(frozen=True)
class ExperimentSpec:
    n_turbines: int = 2
    sigma: float = 0.05
    duration: float = 3600.0
    mode: str = "dempc"
    wind_seed: int = 0
    controller_seed: int = 0
    training_seed: int = 0
    training_steps: int = DEFAULT_TRAINING_STEPS
    dt: float = 1.0
    settle_time: float = SETTLE_TIME

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        period = ControllerConfig().sampling_period
        if self.duration <= 0 or abs(self.duration / period - round(self.duration / period)) > 1e-9:
            raise ConfigurationError("duration must be a positive multiple of the sampling period")


@dataclass
class SimulationLog:
    spec: ExperimentSpec
    sample_times: np.ndarray  # every sampling period, including t = 0
    states: np.ndarray  # (samples, N, 4)
    yaws: np.ndarray  # (samples, N) input applied from each sample on
    power_times: np.ndarray  # every integrator step
    powers: np.ndarray  # (steps, N)
    wind: np.ndarray  # (steps, 2) free stream at power_times
    controller: list[tuple[int, AgentRecord]] = field(default_factory=list)

    @property
    def total_power(self) -> np.ndarray:
        return self.powers.sum(axis=1)

    @property
    def energy(self) -> float:
        return float(np.trapezoid(self.total_power, self.power_times))

    def conflict_rate(self) -> float:
        """Fraction of sampling periods with any final-iteration conflict flag."""
        if not self.controller:
            return 0.0
        periods: dict[int, bool] = {}
        for period, rec in self.controller:
            periods[period] = periods.get(period, False) or rec.conflict or rec.stationary_conflict
        return sum(periods.values()) / len(periods)

    def mean_displacement(self, cfg: FarmConfig) -> np.ndarray:
        """Mean (x, y) offset from neutral per turbine over the logged samples."""
        return (self.states[:, :, :2] - cfg.neutral_positions()[None]).mean(axis=0)


# -- models --------------------------------------------------------------


def model_directory(base: str | Path, n: int, steps: int, seed: int) -> Path:
    return Path(base) / f"row{n}_steps{steps}_seed{seed}"


def train_models(cfg: FarmConfig, steps: int, seed: int) -> list[SurrogateModel]:
    data = generate_training_data(cfg, steps, seed)
    if not data.complete:
        log.warning("training data incomplete (%d samples)", data.inputs[0].shape[0])
    return [train_network(data, i, seed=seed + i) for i in range(cfg.n_turbines)]


def load_models(directory: str | Path, n: int) -> list[SurrogateModel]:
    directory = Path(directory)
    paths = [directory / f"turbine{i}.json" for i in range(n)]
    missing = [str(p) for p in paths if not p.exists()]
    if missing:
        raise ConfigurationError(f"missing surrogate models: {', '.join(missing)}")
    return [SurrogateModel.load(p) for p in paths]


def save_models(models: Sequence[SurrogateModel], directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, m in enumerate(models):
        m.save(directory / f"turbine{i}.json")


def load_or_train_models(n: int, steps: int, seed: int, base: str | Path) -> list[SurrogateModel]:
    """Cached surrogates for a 1xn row; trains and stores them on a miss.

    The cache directory also holds ``meta.json`` with the wall time spent on
    data generation and training.
    """
    directory = model_directory(base, n, steps, seed)
    try:
        return load_models(directory, n)
    except ConfigurationError:
        log.info("training surrogates for 1x%d (%d steps, seed %d)", n, steps, seed)
        t0 = time.perf_counter()
        models = train_models(make_row_farm(n), steps, seed)
        elapsed = time.perf_counter() - t0
        save_models(models, directory)
        meta = {"n_turbines": n, "steps": steps, "seed": seed, "train_seconds": elapsed}
        (directory / "meta.json").write_text(json.dumps(meta, indent=2))
        return models


def training_metadata(n: int, steps: int, seed: int, base: str | Path) -> dict:
    path = model_directory(base, n, steps, seed) / "meta.json"
    return json.loads(path.read_text()) if path.exists() else {}


# -- closed loop ---------------------------------------------------------


def wind_for(spec: ExperimentSpec) -> WindSeries:
    return generate_wind_series(WindConfig((8.0, 0.0), spec.sigma, spec.duration, spec.wind_seed))


def run_closed_loop(
    spec: ExperimentSpec,
    models: Sequence[SurrogateModel] | None = None,
    controller_cfg: ControllerConfig | None = None,
    farm: FarmConfig | None = None,
) -> SimulationLog:
    """Simulate one logged run after a greedy pre-roll.

    Inputs are updated once per sampling period: greedy mode holds (1/3, 0),
    DEMPC mode asks the distributed controller for new yaw angles.
    """
    cfg = farm or make_row_farm(spec.n_turbines)
    ccfg = controller_cfg or ControllerConfig()
    if spec.mode == "dempc":
        if models is None or len(models) != cfg.n_turbines:
            raise ConfigurationError("dempc mode needs one surrogate model per turbine")
        controller = DistributedController(cfg, models, ccfg, seed=spec.controller_seed)
    sim = FarmSimulator(cfg, spec.dt)
    series = wind_for(spec)
    fs = settle_greedy(sim, spec.settle_time, series(0.0))
    fs = FarmState(0.0, fs.states, fs.wake, 0.0, fs.powers)

    n = cfg.n_turbines
    periods = int(round(spec.duration / ccfg.sampling_period))
    steps_per_period = int(round(ccfg.sampling_period / spec.dt))
    sample_times = np.arange(periods + 1) * ccfg.sampling_period
    states = np.empty((periods + 1, n, 4))
    yaws = np.zeros((periods + 1, n))
    power_times = np.arange(periods * steps_per_period + 1) * spec.dt
    powers = np.empty((power_times.size, n))
    wind = np.empty((power_times.size, 2))
    records: list[tuple[int, AgentRecord]] = []
    yaw = np.zeros(n)
    k = 0
    for p in range(periods):
        states[p] = fs.states
        if spec.mode == "dempc":
            yaw, recs = controller.step(fs.states)
            records.extend((p, r) for r in recs)
        yaws[p] = yaw
        inputs = [TurbineInput(GREEDY_INPUT.a, float(g)) for g in yaw]
        for _ in range(steps_per_period):
            w = series(power_times[k])
            wind[k] = w
            fs = sim.step(fs, inputs, w)
            powers[k] = fs.powers
            k += 1
    states[periods] = fs.states
    yaws[periods] = yaw
    wind[k] = series(power_times[k])
    powers[k] = sim.instantaneous_power(fs, inputs, wind[k])
    return SimulationLog(spec, sample_times, states, yaws, power_times, powers, wind, records)


def energy_gain(dempc_log: SimulationLog, greedy_log: SimulationLog) -> float:
    """Percent change of farm energy from greedy to DEMPC operation."""
    if dempc_log.spec.duration != greedy_log.spec.duration or dempc_log.power_times.size != greedy_log.power_times.size:
        raise ConfigurationError("logs cover different durations")
    if dempc_log.spec.wind_seed != greedy_log.spec.wind_seed:
        raise ConfigurationError("logs were driven by different wind seeds")
    e_g = greedy_log.energy
    return 100.0 * (dempc_log.energy - e_g) / e_g


# -- export --------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def export_run(run: SimulationLog, directory: str | Path, greedy: SimulationLog | None = None) -> list[Path]:
    """Write states/power/controller/wind CSVs and a JSON summary."""
    out = Path(directory)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    n = run.states.shape[1]
    written = []

    def write_csv(name, header, rows):
        path = out / name
        try:
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(header)
                w.writerows(rows)
        except OSError as exc:
            raise OSError(f"failed writing {path}: {exc}") from exc
        written.append(path)

    write_csv(
        "states.csv",
        ["t"] + [f"{c}_{i}" for i in range(n) for c in ("x", "y", "vx", "vy")] + [f"yaw_{i}" for i in range(n)],
        ([_fmt(t)] + [_fmt(v) for v in s.ravel()] + [_fmt(g) for g in yw]
         for t, s, yw in zip(run.sample_times, run.states, run.yaws)),
    )
    write_csv(
        "power.csv",
        ["t"] + [f"P_{i}" for i in range(n)] + ["P_total"],
        ([_fmt(t)] + [_fmt(v) for v in p] + [_fmt(p.sum())] for t, p in zip(run.power_times, run.powers)),
    )
    write_csv(
        "controller.csv",
        ["period", "agent", "level", "naive_cost", "informed_cost", "conflict_flag",
         "stationary_conflict_flag", "yaw_committed", "x_s", "y_s", "vx_s", "vy_s", "terminal_residual"],
        ([p, r.agent, r.level, _fmt(r.naive_cost), _fmt(r.informed_cost), int(r.conflict),
          int(r.stationary_conflict), _fmt(r.yaw), *(_fmt(v) for v in r.x_s), _fmt(r.terminal_residual)]
         for p, r in run.controller),
    )
    write_csv(
        "wind.csv",
        ["t_s", "vx_ms", "vy_ms"],
        ([_fmt(t), _fmt(w[0]), _fmt(w[1])] for t, w in zip(run.power_times, run.wind)),
    )
    summary = {
        "config": asdict(run.spec),
        "energy_J": run.energy,
        "conflict_rate": run.conflict_rate(),
        "seeds": {
            "wind": run.spec.wind_seed,
            "controller": run.spec.controller_seed,
            "training": run.spec.training_seed,
        },
    }
    if greedy is not None:
        summary["energy_greedy_J"] = greedy.energy
        summary["gain_percent"] = energy_gain(run, greedy)
    path = out / "summary.json"
    try:
        path.write_text(json.dumps(summary, indent=2))
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}") from exc
    written.append(path)
    return written


# -- sweeps --------------------------------------------------------------

SWEEP_AXES = {
    "sigma": [0.05, 0.10, 0.15, 0.20],
    "size": [2, 3, 4, 5],
}


@dataclass
class SweepPoint:
    point: float
    energy_greedy: float
    energy_dempc: float
    gain: float
    mean_abs_y: list[float]
    mean_x: list[float]
    conflict_rate: float
    error: str = ""


def paired_run(spec: ExperimentSpec, model_base: str | Path) -> tuple[SimulationLog, SimulationLog]:
    models = load_or_train_models(spec.n_turbines, spec.training_steps, spec.training_seed, model_base)
    greedy = run_closed_loop(replace(spec, mode="greedy"))
    dempc = run_closed_loop(replace(spec, mode="dempc"), models)
    return greedy, dempc


def _sweep_worker(args) -> SweepPoint:
    spec, value, model_base = args
    try:
        greedy, dempc = paired_run(spec, model_base)
    except Exception as exc:  # noqa: BLE001 -- one bad point must not stop the sweep
        log.exception("sweep point %s failed", value)
        return SweepPoint(value, float("nan"), float("nan"), float("nan"), [], [], float("nan"), repr(exc))
    cfg = make_row_farm(spec.n_turbines)
    disp = dempc.mean_displacement(cfg)
    abs_y = np.abs(dempc.states[:, :, 1]).mean(axis=0)
    return SweepPoint(
        value, greedy.energy, dempc.energy, energy_gain(dempc, greedy),
        abs_y.tolist(), disp[:, 0].tolist(), dempc.conflict_rate(),
    )


def sweep(template: ExperimentSpec, axis: str, model_base: str | Path, workers: int | None = None) -> list[SweepPoint]:
    """Paired greedy/DEMPC runs along one axis of the experiment grid."""
    if axis not in SWEEP_AXES:
        raise ConfigurationError(f"unknown sweep axis {axis!r}; choose from {sorted(SWEEP_AXES)}")
    jobs = []
    for value in SWEEP_AXES[axis]:
        spec = replace(template, sigma=value) if axis == "sigma" else replace(template, n_turbines=int(value))
        jobs.append((spec, value, str(model_base)))
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    if workers <= 1:
        return [_sweep_worker(j) for j in jobs]
    # models must exist before workers race to train them
    for spec, _, base in jobs:
        load_or_train_models(spec.n_turbines, spec.training_steps, spec.training_seed, base)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_sweep_worker, jobs))


def write_sweep(points: Sequence[SweepPoint], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["point", "E_greedy_J", "E_dempc_J", "gain_percent", "mean_abs_y_m", "mean_x_disp_m", "conflict_rate", "error"])
        for p in points:
            w.writerow([
                p.point, _fmt(p.energy_greedy), _fmt(p.energy_dempc), _fmt(p.gain),
                " ".join(f"{v:.3f}" for v in p.mean_abs_y), " ".join(f"{v:.3f}" for v in p.mean_x),
                _fmt(p.conflict_rate), p.error,
            ])
