"""Distributed economic MPC with a self-organizing social hierarchy.

Every turbine runs an :class:`Agent`. Within one sampling period the agents
first agree on stationary set-points, then on dynamic trajectories that end
at them. In each iteration agents decide level by level (lower levels
first, same-level agents simultaneously) and broadcast their plans to their
neighbors. An agent whose neighborhood cost got worse once the neighbors'
new plans arrived (informed > naive) jumps to a random level.
"""

from __future__ import annotations

import logging
import math
import time
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np

from floatfarm.farm import FarmConfig, rotor_overlap_area

log = logging.getLogger(__name__)


class TransitionModel(Protocol):
    def forward(self, z: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class ControllerConfig:
    horizon: int = 5
    levels: int = 2
    iterations_per_phase: int = 3
    Q: tuple = ((1.0, 0.0), (0.0, 1.0))
    sampling_period: float = 60.0
    yaw_bound: float = math.radians(10.0)
    a_fixed: float = 1.0 / 3.0
    terminal_tolerance: tuple[float, float] = (5.0, 0.05)  # position m, velocity m/s
    conflict_tolerance: float = 1e-6
    terminal_weight: float = 1e3
    position_scale: float = 100.0
    velocity_scale: float = 1.0
    yaw_grid_step: float = math.radians(1.0)
    fixed_point_iterations: int = 200
    fixed_point_tolerance: tuple[float, float] = (0.1, 0.001)
    max_solver_iterations: int = 50
    fd_step: float = 1e-4
    stop_tolerance: float = 1e-6

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.levels < 2:
            raise ValueError("at least two hierarchy levels are required")
        if self.iterations_per_phase < 1:
            raise ValueError("iterations_per_phase must be >= 1")

    @property
    def Q_matrix(self) -> np.ndarray:
        return np.asarray(self.Q, dtype=float)

    def yaw_grid(self) -> np.ndarray:
        n = int(round(self.yaw_bound / self.yaw_grid_step))
        return np.arange(-n, n + 1) * self.yaw_grid_step


@dataclass
class AgentPlan:
    """What an agent broadcasts: its candidate trajectories and set-point."""

    owner: int
    states: np.ndarray  # (H + 1, 4)
    yaws: np.ndarray  # (H,)
    x_s: np.ndarray  # (4,)
    yaw_s: float
    level: int
    naive_cost: float = float("nan")
    stationary_cost: float = float("nan")
    terminal_ok: bool = True
    terminal_residual: float = 0.0
    a: float = 1.0 / 3.0

    def input_traj(self):
        from floatfarm.farm import TurbineInput

        return [TurbineInput(self.a, float(g)) for g in self.yaws]

    def shifted(self) -> "AgentPlan":
        """The same plan one sampling period later (last entries repeated)."""
        states = np.vstack((self.states[1:], self.states[-1:]))
        yaws = np.append(self.yaws[1:], self.yaw_s)
        return replace(self, states=states, yaws=yaws)

    @classmethod
    def hold(cls, owner: int, x: np.ndarray, horizon: int, level: int, a: float = 1.0 / 3.0) -> "AgentPlan":
        """Placeholder plan that keeps the measured state with greedy inputs."""
        x = np.asarray(x, dtype=float)
        return cls(owner, np.tile(x, (horizon + 1, 1)), np.zeros(horizon), x.copy(), 0.0, level, a=a)


class MessageBus:
    """Reliable, per-sender ordered delivery between adjacent agents only."""

    def __init__(self, cfg: FarmConfig):
        self.cfg = cfg
        self.inbox: dict[int, dict[int, list[AgentPlan]]] = {
            i: defaultdict(list) for i in range(cfg.n_turbines)
        }

    def broadcast(self, plan: AgentPlan) -> None:
        for j in self.cfg.neighbors(plan.owner):
            self.inbox[j][plan.owner].append(plan)

    def latest(self, receiver: int) -> dict[int, AgentPlan]:
        return {s: msgs[-1] for s, msgs in self.inbox[receiver].items() if msgs}

    def clear(self) -> None:
        for box in self.inbox.values():
            box.clear()


# -- costs ---------------------------------------------------------------


def _yaw_penalty(yaw, a: float, Q: np.ndarray):
    """Q-weighted deviation of (a, yaw) from (1/3, 0); ``yaw`` may be an array."""
    da = a - 1.0 / 3.0
    return Q[0, 0] * da * da + (Q[0, 1] + Q[1, 0]) * da * yaw + Q[1, 1] * yaw * yaw


def stationary_cost(
    y_s,
    yaw_s,
    neighbor_plans: Sequence[AgentPlan],
    D: float,
    cfg: ControllerConfig,
):
    """Steady-state neighborhood cost; vectorized over candidate arrays."""
    Q = cfg.Q_matrix
    cost = _yaw_penalty(np.asarray(yaw_s, dtype=float), cfg.a_fixed, Q)
    n = len(neighbor_plans)
    for p in neighbor_plans:
        cost = cost + rotor_overlap_area(y_s, p.x_s[1], D) / n + _yaw_penalty(p.yaw_s, p.a, Q)
    return cost


def stage_cost_sum(
    states: np.ndarray,
    yaws: np.ndarray,
    neighbor_plans: Sequence[AgentPlan],
    D: float,
    cfg: ControllerConfig,
):
    """Sum over k < H of the neighborhood stage cost.

    ``states`` is (..., H + 1, 4) and ``yaws`` (..., H); leading batch axes
    are carried through.
    """
    Q = cfg.Q_matrix
    H = yaws.shape[-1]
    cost = _yaw_penalty(yaws, cfg.a_fixed, Q).sum(axis=-1)
    n = len(neighbor_plans)
    for p in neighbor_plans:
        overlap = rotor_overlap_area(states[..., :H, 1], p.states[:H, 1], D)
        cost = cost + np.sum(overlap, axis=-1) / n + _yaw_penalty(p.yaws[:H], p.a, Q).sum()
    return cost


# -- agent ---------------------------------------------------------------


@dataclass
class StationaryResult:
    x_s: np.ndarray
    yaw_s: float
    cost: float
    converged: bool


@dataclass
class AgentTimings:
    stationary: float = 0.0
    dynamic: float = 0.0
    calls: int = 0


class Agent:
    """Local EMPC of one turbine; sees only its own surrogate and neighbor plans."""

    def __init__(
        self,
        index: int,
        neighbors: Sequence[int],
        model: TransitionModel,
        rotor_diameter: float,
        cfg: ControllerConfig,
        rng: np.random.Generator,
        level: int | None = None,
        neighbor_degrees: dict[int, int] | None = None,
    ):
        self.index = index
        self.neighbors = list(neighbors)
        # how many neighbors each neighbor shares its overlap cost among
        self.neighbor_degrees = {j: (neighbor_degrees or {}).get(j, 1) for j in self.neighbors}
        self.model = model
        self.D = rotor_diameter
        self.cfg = cfg
        self.rng = rng
        self.level = int(rng.integers(1, cfg.levels + 1)) if level is None else level
        self.plan: AgentPlan | None = None
        self.assumed: dict[int, AgentPlan] = {}
        self.warm_start = np.zeros(cfg.horizon)
        self.previous_setpoint: StationaryResult | None = None
        self.committed_yaw = 0.0
        self.has_trajectory = False
        self.timings = AgentTimings()

    # the model sees rows (x, y, vx, vy, a, yaw)
    def _step(self, X: np.ndarray, yaw: np.ndarray) -> np.ndarray:
        z = np.empty((X.shape[0], 6))
        z[:, :4] = X
        z[:, 4] = self.cfg.a_fixed
        z[:, 5] = yaw
        return self.model.forward(z)

    def rollout(self, x0: np.ndarray, yaws: np.ndarray) -> np.ndarray:
        yaws = np.atleast_2d(yaws)
        B, H = yaws.shape
        out = np.empty((B, H + 1, 4))
        out[:, 0] = x0
        for k in range(H):
            out[:, k + 1] = self._step(out[:, k], yaws[:, k])
        return out

    def neighbor_plans(self) -> list[AgentPlan]:
        return [self.assumed[j] for j in self.neighbors if j in self.assumed]

    # -- stationary problem ------------------------------------------------

    def _stationary_impact(self, y_s, yaw_s) -> np.ndarray:
        """Each neighbor's stationary cost terms that depend on this agent;
        shape (..., n_neighbors)."""
        pen = _yaw_penalty(np.asarray(yaw_s, dtype=float), self.cfg.a_fixed, self.cfg.Q_matrix)
        cols = [
            rotor_overlap_area(y_s, p.x_s[1], self.D) / self.neighbor_degrees[p.owner] + pen
            for p in self.neighbor_plans()
        ]
        return np.stack(cols, axis=-1) if cols else np.zeros(np.shape(y_s) + (0,))

    def _dynamic_impact(self, traj: np.ndarray, yaws: np.ndarray) -> np.ndarray:
        """Each neighbor's stage-cost terms that depend on this agent's
        trajectory; ``traj`` is (B, H + 1, 4), result (B, n_neighbors)."""
        H = yaws.shape[-1]
        pen = _yaw_penalty(yaws, self.cfg.a_fixed, self.cfg.Q_matrix).sum(axis=-1)
        cols = [
            rotor_overlap_area(traj[:, :H, 1], p.states[:H, 1], self.D).sum(axis=-1) / self.neighbor_degrees[p.owner] + pen
            for p in self.neighbor_plans()
        ]
        return np.stack(cols, axis=-1) if cols else np.zeros((traj.shape[0], 0))

    def solve_stationary(self, x_measured: np.ndarray, reference: AgentPlan | None = None) -> StationaryResult:
        """Grid search over yaw; each candidate's steady state is the fixed
        point of the surrogate map started from the measurement.

        With a ``reference`` (the set-point the neighbors currently assume),
        candidates that would raise any neighbor's cost above what the
        reference gives them are excluded, so neighbors deciding earlier are
        never made worse off.
        """
        cfg = self.cfg
        grid = cfg.yaw_grid()
        X = np.tile(np.asarray(x_measured, dtype=float), (grid.size, 1))
        tol = np.array([cfg.fixed_point_tolerance[0]] * 2 + [cfg.fixed_point_tolerance[1]] * 2)
        converged = np.zeros(grid.size, dtype=bool)
        for _ in range(cfg.fixed_point_iterations):
            X_new = self._step(X, grid)
            converged = np.all(np.abs(X_new - X) < tol, axis=1)
            X = X_new
            if converged.all():
                break
        finite = np.all(np.isfinite(X), axis=1)
        converged &= finite
        if not converged.any():
            log.warning("agent %d: stationary fixed point diverged for all candidates", self.index)
            if self.previous_setpoint is not None:
                return replace(self.previous_setpoint, converged=False)
            return StationaryResult(np.asarray(x_measured, dtype=float), 0.0, math.inf, False)
        admissible = converged
        if reference is not None and self.neighbor_plans():
            ref = self._stationary_impact(reference.x_s[1], reference.yaw_s)
            guarded = converged & np.all(self._stationary_impact(X[:, 1], grid) <= ref + 1e-12, axis=1)
            if guarded.any():
                admissible = guarded
        costs = np.where(
            admissible,
            stationary_cost(X[:, 1], grid, self.neighbor_plans(), self.D, cfg),
            np.inf,
        )
        # ties (to rounding) go to the smaller |yaw|
        key = np.lexsort((np.abs(grid), np.round(costs, 12)))
        best = int(key[0])
        return StationaryResult(X[best].copy(), float(grid[best]), float(costs[best]), True)

    # -- dynamic problem ---------------------------------------------------

    def _objective(self, x0, yaws, x_s) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        cfg = self.cfg
        traj = self.rollout(x0, yaws)
        stage = stage_cost_sum(traj, np.atleast_2d(yaws), self.neighbor_plans(), self.D, cfg)
        err = traj[:, -1] - x_s
        w = np.array([1.0 / cfg.position_scale**2] * 2 + [1.0 / cfg.velocity_scale**2] * 2)
        terminal = cfg.terminal_weight * np.sum(w * err * err, axis=1)
        return stage + terminal, stage, traj

    def solve_dynamic(self, x_measured: np.ndarray, x_s: np.ndarray, warm_start: np.ndarray):
        """Projected finite-difference gradient descent over the yaw sequence.

        Returns (yaws, states, naive_cost, terminal_ok, terminal_residual,
        cost_history).
        """
        cfg = self.cfg
        H = cfg.horizon
        lo, hi = -cfg.yaw_bound, cfg.yaw_bound
        x0 = np.asarray(x_measured, dtype=float)
        u = np.clip(np.asarray(warm_start, dtype=float), lo, hi)
        f, stage0, traj0 = self._objective(x0, u, x_s)
        f, stage0 = float(f[0]), float(stage0[0])
        impact0 = self._dynamic_impact(traj0, u[None])[0]
        history = [f]
        eye = np.eye(H) * cfg.fd_step

        def gradient(u):
            fp, _, _ = self._objective(x0, np.vstack((u + eye, u - eye)), x_s)
            return (fp[:H] - fp[H:]) / (2.0 * cfg.fd_step)

        g = gradient(u)
        t = None
        for _ in range(cfg.max_solver_iterations):
            gmax = float(np.max(np.abs(g)))
            if gmax == 0.0:
                break
            # spectral (Barzilai-Borwein) trial step, safeguarded
            if t is None or not np.isfinite(t) or t <= 0.0:
                t = 2.0 * cfg.yaw_bound / gmax
            t = min(t, 2.0 * cfg.yaw_bound / gmax * 1e3)
            accepted = False
            for _ in range(40):
                cand = np.clip(u - t * g, lo, hi)
                step = cand - u
                # below the finite-difference resolution the gradient says nothing
                if np.max(np.abs(step)) < cfg.fd_step:
                    break
                fc, sc, tc = self._objective(x0, cand, x_s)
                fc, sc = float(fc[0]), float(sc[0])
                # neighbors planned against the warm start: neither our own
                # stage cost nor any neighbor's share of it may rise above it
                harmless = sc <= stage0 and np.all(self._dynamic_impact(tc, cand[None])[0] <= impact0 + 1e-12)
                if fc <= f + 1e-4 * float(g @ step) and harmless:
                    accepted = True
                    break
                t *= 0.5
            if not accepted:
                break
            decrease = f - fc
            g_new = gradient(cand)
            s_k, y_k = cand - u, g_new - g
            sy = float(s_k @ y_k)
            t = float(s_k @ s_k) / sy if sy > 0.0 else None
            u, f, g = cand, fc, g_new
            history.append(f)
            if decrease < cfg.stop_tolerance:
                break
        _, stage, traj = self._objective(x0, u, x_s)
        err = traj[0, -1] - x_s
        pos_err = float(np.hypot(err[0], err[1]))
        vel_err = float(np.hypot(err[2], err[3]))
        ok = pos_err <= cfg.terminal_tolerance[0] and vel_err <= cfg.terminal_tolerance[1]
        return u, traj[0], float(stage[0]), ok, pos_err, history

    # -- costs after neighbors reply ---------------------------------------

    def informed_stationary_cost(self, plan: AgentPlan) -> float:
        return float(stationary_cost(plan.x_s[1], plan.yaw_s, self.neighbor_plans(), self.D, self.cfg))

    def informed_dynamic_cost(self, plan: AgentPlan) -> float:
        return float(stage_cost_sum(plan.states, plan.yaws, self.neighbor_plans(), self.D, self.cfg))


def update_hierarchy_level(
    level: int, naive: float, informed: float, rng: np.random.Generator, cfg: ControllerConfig
) -> int:
    """Keep the level unless the informed cost is worse than the naive one,
    in which case draw a new level uniformly (possibly the same)."""
    if informed <= naive + cfg.conflict_tolerance:
        return level
    return int(rng.integers(1, cfg.levels + 1))


# -- coordination --------------------------------------------------------


@dataclass
class AgentRecord:
    """Per-agent outcome of one sampling period, for the controller log."""

    agent: int
    level: int
    naive_cost: float
    informed_cost: float
    conflict: bool
    stationary_conflict: bool
    yaw: float
    x_s: np.ndarray
    terminal_residual: float
    terminal_ok: bool
    solve_time: float


@dataclass
class DistributedController:
    """A set of agents on one farm plus their message bus."""

    farm: FarmConfig
    models: Sequence[TransitionModel]
    cfg: ControllerConfig = field(default_factory=ControllerConfig)
    seed: int = 0
    levels: Sequence[int] | None = None

    def __post_init__(self):
        rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(self.seed).spawn(self.farm.n_turbines)]
        self.agents = [
            Agent(
                i,
                self.farm.neighbors(i),
                self.models[i],
                self.farm.turbines[i].spec.rotor_diameter,
                self.cfg,
                rngs[i],
                None if self.levels is None else self.levels[i],
                {j: len(self.farm.neighbors(j)) for j in self.farm.neighbors(i)},
            )
            for i in range(self.farm.n_turbines)
        ]
        self.bus = MessageBus(self.farm)
        self.period = 0

    def step(self, measurements: np.ndarray) -> tuple[np.ndarray, list[AgentRecord]]:
        """Run one sampling period; returns committed yaws and per-agent records."""
        return coordinate_sampling_period(self.agents, measurements, self.bus, self.cfg, self)


def _levels_in_order(agents: Sequence[Agent]) -> list[list[Agent]]:
    groups: dict[int, list[Agent]] = defaultdict(list)
    for ag in agents:
        groups[ag.level].append(ag)
    return [groups[k] for k in sorted(groups)]


def _refresh(agent: Agent, bus: MessageBus) -> None:
    agent.assumed.update(bus.latest(agent.index))


def coordinate_sampling_period(
    agents: Sequence[Agent],
    measurements: np.ndarray,
    bus: MessageBus,
    cfg: ControllerConfig,
    controller: DistributedController | None = None,
) -> tuple[np.ndarray, list[AgentRecord]]:
    """Stationary phase, then dynamic phase, each ``iterations_per_phase``
    sweeps through the hierarchy levels; returns the first yaw of each plan."""
    measurements = np.asarray(measurements, dtype=float)
    for ag in agents:
        ag.timings = AgentTimings()
    # open the period with each agent's warm start re-predicted from the new
    # measurement, so neighbors assume exactly what the solver starts from
    bus.clear()
    for ag in agents:
        x = measurements[ag.index]
        prev = ag.plan or AgentPlan.hold(ag.index, x, cfg.horizon, ag.level, cfg.a_fixed)
        yaws = np.clip(ag.warm_start, -cfg.yaw_bound, cfg.yaw_bound)
        ag.plan = replace(prev, states=ag.rollout(x, yaws)[0], yaws=yaws.copy(), level=ag.level)
        bus.broadcast(ag.plan)
    for ag in agents:
        _refresh(ag, bus)

    stationary: dict[int, StationaryResult] = {}
    stationary_naive: dict[int, float] = {}
    stationary_conflict = {ag.index: False for ag in agents}
    plans: dict[int, AgentPlan] = {}

    # phase 1: stationary set-points
    for it in range(cfg.iterations_per_phase):
        for group in _levels_in_order(agents):
            outgoing = []
            for ag in group:
                t0 = time.perf_counter()
                res = ag.solve_stationary(measurements[ag.index], ag.plan)
                ag.timings.stationary += time.perf_counter() - t0
                stationary[ag.index] = res
                stationary_naive[ag.index] = res.cost
                base = ag.plan or AgentPlan.hold(ag.index, measurements[ag.index], cfg.horizon, ag.level, cfg.a_fixed)
                outgoing.append(replace(base, x_s=res.x_s, yaw_s=res.yaw_s, level=ag.level,
                                        stationary_cost=res.cost))
            for plan in outgoing:
                ag = agents[plan.owner]
                ag.plan = plan
                bus.broadcast(plan)
            for ag in agents:
                _refresh(ag, bus)
        for ag in agents:
            informed = ag.informed_stationary_cost(ag.plan)
            conflict = informed > stationary_naive[ag.index] + cfg.conflict_tolerance
            if it == cfg.iterations_per_phase - 1:
                stationary_conflict[ag.index] = conflict
            ag.level = update_hierarchy_level(ag.level, stationary_naive[ag.index], informed, ag.rng, cfg)

    # phase 2: dynamic trajectories toward the set-points. Agents without a
    # previous trajectory start from holding their set-point yaw and announce it.
    fresh = [ag for ag in agents if not ag.has_trajectory]
    for ag in fresh:
        ag.warm_start = np.full(cfg.horizon, stationary[ag.index].yaw_s)
        x = measurements[ag.index]
        ag.plan = replace(ag.plan, states=ag.rollout(x, ag.warm_start)[0], yaws=ag.warm_start.copy())
        bus.broadcast(ag.plan)
    if fresh:
        for ag in agents:
            _refresh(ag, bus)
    records: dict[int, dict] = {}
    for it in range(cfg.iterations_per_phase):
        for group in _levels_in_order(agents):
            outgoing = []
            for ag in group:
                x_s = stationary[ag.index].x_s
                t0 = time.perf_counter()
                try:
                    yaws, states, naive, ok, resid, _ = ag.solve_dynamic(measurements[ag.index], x_s, ag.warm_start)
                except Exception:  # noqa: BLE001 -- fail safe: hold the previous input
                    log.exception("agent %d: dynamic solve failed", ag.index)
                    yaws = np.full(cfg.horizon, ag.committed_yaw)
                    states = ag.rollout(measurements[ag.index], yaws)[0]
                    naive, ok, resid = float("nan"), False, float("nan")
                ag.timings.dynamic += time.perf_counter() - t0
                ag.warm_start = yaws
                outgoing.append(AgentPlan(
                    ag.index, states, yaws, x_s, stationary[ag.index].yaw_s, ag.level, naive,
                    stationary[ag.index].cost, ok, resid, cfg.a_fixed,
                ))
            for plan in outgoing:
                agents[plan.owner].plan = plan
                bus.broadcast(plan)
            for ag in agents:
                _refresh(ag, bus)
        for ag in agents:
            plan = ag.plan
            informed = ag.informed_dynamic_cost(plan)
            conflict = informed > plan.naive_cost + cfg.conflict_tolerance
            records[ag.index] = dict(naive=plan.naive_cost, informed=informed, conflict=conflict)
            ag.level = update_hierarchy_level(ag.level, plan.naive_cost, informed, ag.rng, cfg)

    yaws = np.empty(len(agents))
    out = []
    for ag in agents:
        plan = ag.plan
        yaws[ag.index] = float(np.clip(plan.yaws[0], -cfg.yaw_bound, cfg.yaw_bound))
        ag.committed_yaw = yaws[ag.index]
        res = stationary[ag.index]
        if plan.terminal_ok or ag.previous_setpoint is None:
            ag.previous_setpoint = res
        ag.warm_start = np.append(plan.yaws[1:], plan.yaw_s)
        ag.has_trajectory = True
        r = records[ag.index]
        out.append(AgentRecord(
            ag.index, ag.level, r["naive"], r["informed"], r["conflict"], stationary_conflict[ag.index],
            yaws[ag.index], res.x_s.copy(), plan.terminal_residual, plan.terminal_ok,
            ag.timings.stationary + ag.timings.dynamic,
        ))
    if controller is not None:
        controller.period += 1
    return yaws, out
