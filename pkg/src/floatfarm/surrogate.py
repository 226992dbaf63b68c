"""Per-turbine neural-network surrogates of the 60 s platform transition map.

Each network maps (x, y, vx, vy, a, yaw) at one sample to (x, y, vx, vy) at
the next. Only the owning turbine's own state and input enter; wake coupling
from other turbines is left as model error.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from floatfarm.dynamics import MooringLimitError, SimulationDiverged
from floatfarm.farm import GREEDY_INPUT, FarmConfig, TurbineInput, TurbineState
from floatfarm.simulator import FarmSimulator, FarmState

log = logging.getLogger(__name__)

SAMPLING_PERIOD = 60.0
SETTLE_TIME = 2000.0
REDRAW_PROBABILITY = 0.1
A_RANGE = (0.2, 0.4)
YAW_RANGE = (-math.radians(20.0), math.radians(20.0))
FREE_STREAM = np.array([8.0, 0.0])
HIDDEN = 20


class TrainingError(RuntimeError):
    pass


# -- data ----------------------------------------------------------------


@dataclass
class TrainingDataset:
    """Transitions per turbine: ``inputs[i]`` is (S, 6), ``targets[i]`` is (S, 4)."""

    inputs: list[np.ndarray]
    targets: list[np.ndarray]
    redraws: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    complete: bool = True

    @property
    def n_turbines(self) -> int:
        return len(self.inputs)

    def to_csv(self, path: str | Path, turbine: int) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "vx", "vy", "a", "yaw", "x_next", "y_next", "vx_next", "vy_next"])
            for row in np.hstack((self.inputs[turbine], self.targets[turbine])):
                w.writerow([repr(float(v)) for v in row])

    @staticmethod
    def read_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return data[:, :6], data[:, 6:]


def settle_greedy(sim: FarmSimulator, duration: float = SETTLE_TIME, wind=FREE_STREAM) -> FarmState:
    """Run from the neutral layout with greedy inputs until quasi-steady."""
    fs = sim.initial_state()
    inputs = [GREEDY_INPUT] * sim.cfg.n_turbines
    wind = np.asarray(wind, dtype=float)
    return sim.run(fs, inputs, lambda t: wind, duration)


def random_input(rng: np.random.Generator) -> TurbineInput:
    return TurbineInput(float(rng.uniform(*A_RANGE)), float(rng.uniform(*YAW_RANGE)))


def _redraw(inputs: list[TurbineInput], rng: np.random.Generator) -> np.ndarray:
    flags = rng.random(len(inputs)) < REDRAW_PROBABILITY
    for i in np.flatnonzero(flags):
        inputs[i] = random_input(rng)
    return flags


def simulate_period(sim: FarmSimulator, fs: FarmState, inputs, wind_fn) -> FarmState:
    return sim.run(fs, inputs, wind_fn, SAMPLING_PERIOD)


def generate_training_data(
    cfg: FarmConfig,
    steps: int,
    seed: int = 0,
    dt: float = 1.0,
    progress=None,
) -> TrainingDataset:
    """Random-input excitation of the farm at fixed 8 m/s wind, sampled every 60 s.

    Each turbine independently redraws (a, yaw) with probability 0.1 per
    sample. A simulator failure stops generation and flags the dataset as
    incomplete.
    """
    sim = FarmSimulator(cfg, dt)
    rng = np.random.default_rng(seed)
    n = cfg.n_turbines
    fs = settle_greedy(sim)
    inputs = [GREEDY_INPUT] * n
    X = np.empty((steps, n, 6))
    Y = np.empty((steps, n, 4))
    redraws = np.zeros(n, dtype=int)
    wind_fn = lambda t: FREE_STREAM  # noqa: E731
    done = steps
    for k in range(steps):
        redraws += _redraw(inputs, rng)
        X[k, :, :4] = fs.states
        X[k, :, 4] = [u.a for u in inputs]
        X[k, :, 5] = [u.yaw for u in inputs]
        try:
            fs = simulate_period(sim, fs, inputs, wind_fn)
        except (MooringLimitError, SimulationDiverged) as exc:
            log.error("training simulation aborted at sample %d: %s", k, exc)
            done = k
            break
        Y[k] = fs.states
        if progress is not None:
            progress(k)
    return TrainingDataset(
        [X[:done, i].copy() for i in range(n)],
        [Y[:done, i].copy() for i in range(n)],
        redraws,
        complete=done == steps,
    )


# -- network -------------------------------------------------------------


@dataclass
class SurrogateModel:
    W1: np.ndarray  # (20, 6)
    b1: np.ndarray
    W2: np.ndarray  # (4, 20)
    b2: np.ndarray
    input_offset: np.ndarray
    input_scale: np.ndarray
    output_offset: np.ndarray
    output_scale: np.ndarray
    validation_loss: float = float("nan")

    def __post_init__(self):
        if np.any(self.input_scale == 0) or np.any(self.output_scale == 0):
            raise ValueError("normalization scales must be nonzero")

    # normalization
    def normalize_input(self, z):
        return (z - self.input_offset) / self.input_scale

    def denormalize_input(self, zn):
        return zn * self.input_scale + self.input_offset

    def normalize_output(self, y):
        return (y - self.output_offset) / self.output_scale

    def denormalize_output(self, yn):
        return yn * self.output_scale + self.output_offset

    def forward(self, z: np.ndarray) -> np.ndarray:
        """Batch prediction: rows of (x, y, vx, vy, a, yaw) -> rows of next state."""
        zn = self.normalize_input(np.atleast_2d(z))
        h = np.tanh(zn @ self.W1.T + self.b1)
        return self.denormalize_output(h @ self.W2.T + self.b2)

    # persistence
    def to_dict(self) -> dict:
        return {
            k: (v.tolist() if isinstance(v, np.ndarray) else v)
            for k, v in self.__dict__.items()
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SurrogateModel":
        arrays = {k: np.asarray(v, dtype=float) for k, v in d.items() if k != "validation_loss"}
        return cls(**arrays, validation_loss=float(d.get("validation_loss", float("nan"))))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "SurrogateModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def init_params(rng: np.random.Generator, n_in: int = 6, n_hidden: int = HIDDEN, n_out: int = 4) -> list[np.ndarray]:
    return [
        rng.normal(0.0, 1.0 / math.sqrt(n_in), (n_hidden, n_in)),
        np.zeros(n_hidden),
        rng.normal(0.0, 1.0 / math.sqrt(n_hidden), (n_out, n_hidden)),
        np.zeros(n_out),
    ]


def loss_and_grad(params: Sequence[np.ndarray], Xn: np.ndarray, Yn: np.ndarray):
    """Mean squared error over a normalized batch and its parameter gradients."""
    W1, b1, W2, b2 = params
    pre = Xn @ W1.T + b1
    h = np.tanh(pre)
    out = h @ W2.T + b2
    err = out - Yn
    m = Xn.shape[0]
    loss = float(np.mean(np.sum(err * err, axis=1)))
    d_out = 2.0 * err / m
    gW2 = d_out.T @ h
    gb2 = d_out.sum(axis=0)
    d_pre = (d_out @ W2) * (1.0 - h * h)
    gW1 = d_pre.T @ Xn
    gb1 = d_pre.sum(axis=0)
    return loss, [gW1, gb1, gW2, gb2]


def _loss(params, Xn, Yn) -> float:
    W1, b1, W2, b2 = params
    out = np.tanh(Xn @ W1.T + b1) @ W2.T + b2
    return float(np.mean(np.sum((out - Yn) ** 2, axis=1)))


def gradient_check(
    rng: np.random.Generator,
    n_coords: int = 100,
    n_samples: int = 32,
    eps: float = 1e-6,
) -> float:
    """Largest relative error between back-propagated and central-difference
    gradients over randomly chosen weight coordinates."""
    params = init_params(rng)
    for p in params:
        p += rng.normal(0.0, 0.1, p.shape)
    Xn = rng.normal(size=(n_samples, 6))
    Yn = rng.normal(size=(n_samples, 4))
    _, grads = loss_and_grad(params, Xn, Yn)
    worst = 0.0
    for _ in range(n_coords):
        k = int(rng.integers(len(params)))
        idx = tuple(int(rng.integers(s)) for s in params[k].shape)
        orig = params[k][idx]
        params[k][idx] = orig + eps
        up = _loss(params, Xn, Yn)
        params[k][idx] = orig - eps
        down = _loss(params, Xn, Yn)
        params[k][idx] = orig
        fd = (up - down) / (2.0 * eps)
        an = grads[k][idx]
        worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-8))
    return worst


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0


def train_network(
    data: TrainingDataset,
    turbine: int,
    seed: int = 0,
    max_epochs: int = 3000,
    batch_size: int = 64,
    learning_rate: float = 2e-3,
    patience: int = 50,
    history: TrainHistory | None = None,
) -> SurrogateModel:
    """Fit one turbine's network with Adam and early stopping on a 20 % hold-out."""
    X = data.inputs[turbine]
    Y = data.targets[turbine]
    if X.shape[0] < 500:
        raise TrainingError(f"turbine {turbine}: {X.shape[0]} samples, need at least 500")
    rng = np.random.default_rng(seed)
    in_off, in_scale = X.mean(axis=0), X.std(axis=0)
    out_off, out_scale = Y.mean(axis=0), Y.std(axis=0)
    in_scale = np.where(in_scale > 0, in_scale, 1.0)
    out_scale = np.where(out_scale > 0, out_scale, 1.0)
    Xn = (X - in_off) / in_scale
    Yn = (Y - out_off) / out_scale

    order = rng.permutation(X.shape[0])
    n_val = X.shape[0] // 5
    val, tr = order[:n_val], order[n_val:]

    params = init_params(rng)
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    best = (math.inf, [p.copy() for p in params])
    hist = history if history is not None else TrainHistory()
    stale = 0
    for epoch in range(max_epochs):
        perm = rng.permutation(tr)
        for start in range(0, perm.size, batch_size):
            idx = perm[start:start + batch_size]
            _, grads = loss_and_grad(params, Xn[idx], Yn[idx])
            step += 1
            for p, g, a, b in zip(params, grads, m1, m2):
                a *= beta1
                a += (1 - beta1) * g
                b *= beta2
                b += (1 - beta2) * g * g
                a_hat = a / (1 - beta1**step)
                b_hat = b / (1 - beta2**step)
                p -= learning_rate * a_hat / (np.sqrt(b_hat) + eps)
        hist.train_loss.append(_loss(params, Xn[tr], Yn[tr]))
        v = _loss(params, Xn[val], Yn[val])
        hist.val_loss.append(v)
        if v < best[0]:
            best = (v, [p.copy() for p in params])
            hist.best_epoch = epoch
            stale = 0
        else:
            stale += 1
        if epoch == 99 and not hist.train_loss[-1] < hist.train_loss[0]:
            raise TrainingError(f"turbine {turbine}: training loss did not decrease in 100 epochs")
        if stale >= patience:
            break
    W1, b1, W2, b2 = best[1]
    return SurrogateModel(W1, b1, W2, b2, in_off, in_scale, out_off, out_scale, validation_loss=best[0])


# -- prediction ----------------------------------------------------------


def _as_row(state, inp) -> np.ndarray:
    s = state.as_array() if isinstance(state, TurbineState) else np.asarray(state, dtype=float)
    u = inp.as_array() if isinstance(inp, TurbineInput) else np.asarray(inp, dtype=float)
    return np.concatenate((s, u))


def predict_next_state(model: SurrogateModel, state: TurbineState, inp: TurbineInput) -> TurbineState:
    if not (A_RANGE[0] <= inp.a <= A_RANGE[1] and YAW_RANGE[0] <= inp.yaw <= YAW_RANGE[1]):
        log.warning("surrogate queried outside its training input range: %s", inp)
    return TurbineState.from_array(model.forward(_as_row(state, inp))[0])


def rollout(model: SurrogateModel, x0: TurbineState, inputs: Sequence[TurbineInput]) -> list[TurbineState]:
    traj = [x0]
    for u in inputs:
        traj.append(predict_next_state(model, traj[-1], u))
    return traj


def rollout_array(model: SurrogateModel, x0: np.ndarray, yaws: np.ndarray, a: float = 1.0 / 3.0) -> np.ndarray:
    """Batched rollouts: ``yaws`` is (B, H); returns states of shape (B, H + 1, 4)."""
    yaws = np.atleast_2d(yaws)
    B, H = yaws.shape
    out = np.empty((B, H + 1, 4))
    out[:, 0] = x0
    z = np.empty((B, 6))
    z[:, 4] = a
    for k in range(H):
        z[:, :4] = out[:, k]
        z[:, 5] = yaws[:, k]
        out[:, k + 1] = model.forward(z)
    return out


# -- validation ----------------------------------------------------------


def validate_rmse(
    models: Sequence[SurrogateModel],
    cfg: FarmConfig,
    runs: int = 10,
    seed: int = 0,
    horizon: int = 60,
    burn_in: int = 30,
    dt: float = 1.0,
) -> np.ndarray:
    """Average per-output RMSE of surrogate rollouts against the simulator.

    Each run draws a random initial condition (greedy steady state followed
    by ``burn_in`` samples of random excitation) and a random input sequence,
    then compares ``horizon`` samples. Returns an array (turbines, 4).
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    sim = FarmSimulator(cfg, dt)
    base = settle_greedy(sim)
    n = cfg.n_turbines
    wind_fn = lambda t: FREE_STREAM  # noqa: E731
    total = np.zeros((n, 4))
    for r in range(runs):
        rng = np.random.default_rng([seed, r])
        fs = base.copy()
        inputs = [GREEDY_INPUT] * n
        for _ in range(burn_in):
            _redraw(inputs, rng)
            fs = simulate_period(sim, fs, inputs, wind_fn)
        x0 = fs.states.copy()
        seq = []
        truth = np.empty((horizon, n, 4))
        for k in range(horizon):
            _redraw(inputs, rng)
            seq.append(list(inputs))
            fs = simulate_period(sim, fs, inputs, wind_fn)
            truth[k] = fs.states
        for i, model in enumerate(models):
            pred = rollout(model, TurbineState.from_array(x0[i]), [s[i] for s in seq])[1:]
            err = np.array([p.as_array() for p in pred]) - truth[:, i]
            total[i] += np.sqrt(np.mean(err * err, axis=0))
    return total / runs
