import math

import numpy as np
import pytest

from floatfarm.dempc import (
    Agent,
    AgentPlan,
    ControllerConfig,
    DistributedController,
    MessageBus,
    coordinate_sampling_period,
    stage_cost_sum,
    update_hierarchy_level,
)
from floatfarm.farm import make_row_farm, rotor_overlap_area
from oracles import LinearPlatformModel, OffsetModel, grid_argmin

D = 126.0
TEN = math.radians(10.0)


def agent(index=0, neighbors=(), cfg=None, model=None, level=1, seed=0):
    cfg = cfg or ControllerConfig()
    return Agent(index, list(neighbors), model or LinearPlatformModel(), D, cfg, np.random.default_rng(seed), level)


def plan(owner, y, yaw=0.0, H=5, x=90.0):
    states = np.tile([x, y, 0.0, 0.0], (H + 1, 1))
    return AgentPlan(owner, states, np.full(H, yaw), states[-1].copy(), yaw, 1)


def exact_plant(models, states, yaws):
    return np.vstack([
        m.forward(np.concatenate((s, [1 / 3, g]))[None])[0] for m, s, g in zip(models, states, yaws)
    ])


class TestStationary:
    def test_isolated_agent_stays_greedy(self):
        res = agent().solve_stationary(np.array([90.0, 0, 0, 0]))
        assert res.yaw_s == 0.0 and res.cost == pytest.approx(0.0)

    def test_moves_away_from_neighbor(self):
        ag = agent(0, [1])
        ag.assumed[1] = plan(1, 0.0)
        res = ag.solve_stationary(np.array([90.0, 0, 0, 0]))
        assert 0.5 * 63 <= abs(res.x_s[1]) <= 1.5 * 63
        # grid search equals exhaustive evaluation of every candidate's fixed point
        model = LinearPlatformModel()
        costs = {g: rotor_overlap_area(model.steady(g)[1], 0.0, D) + g * g for g in ControllerConfig().yaw_grid()}
        assert res.cost == pytest.approx(min(costs.values()), abs=1e-3)

    def test_pair_goes_opposite_ways(self):
        farm = make_row_farm(2)
        models = [OffsetModel(0.0), OffsetModel(882.0)]
        ctrl = DistributedController(farm, models, seed=1, levels=[1, 2])
        x = np.array([[90.0, 0, 0, 0], [972.0, 0, 0, 0]])
        for _ in range(3):
            yaws, recs = ctrl.step(x)
            x = exact_plant(models, x, yaws)
        assert recs[0].x_s[1] * recs[1].x_s[1] < 0


class TestDynamic:
    def test_at_set_point_holds(self):
        model = LinearPlatformModel()
        ag = agent(model=model)
        xs = model.steady(TEN)
        yaws, states, naive, ok, resid, _ = ag.solve_dynamic(xs, xs, np.full(5, TEN))
        np.testing.assert_allclose(yaws, TEN, atol=math.radians(0.5))
        assert ok and resid < 0.5
        assert naive == pytest.approx(5 * TEN**2, rel=2e-2)

    def test_cost_monotone(self):
        model = LinearPlatformModel()
        ag = agent(0, [1], model=model)
        ag.assumed[1] = plan(1, 10.0)
        *_, history = ag.solve_dynamic(np.array([90.0, 0, 0, 0]), model.steady(-TEN), np.zeros(5))
        assert len(history) > 1
        assert all(b <= a for a, b in zip(history, history[1:]))

    def test_horizon_one_matches_grid_scan(self):
        cfg = ControllerConfig(horizon=1)
        model = LinearPlatformModel()
        ag = agent(cfg=cfg, model=model)
        x0, xs = np.array([90.0, 0, 0, 0]), model.steady(TEN)
        # warm start holds the set-point input, as the controller does
        yaws, *_ = ag.solve_dynamic(x0, xs, np.full(1, TEN))

        def objective(g):
            nxt = model.forward(np.array([[*x0, 1 / 3, g]]))[0]
            err = (nxt - xs) * np.array([0.01, 0.01, 1.0, 1.0])
            return g * g + 1e3 * float(err @ err)

        best = grid_argmin(objective, -TEN, TEN, math.radians(0.1))
        assert abs(yaws[0] - best) <= math.radians(0.5)

    def test_stage_cost_not_traded_for_terminal_progress(self):
        # a neighbor planned against the warm start; the solve must not hurt it
        model = LinearPlatformModel()
        ag = agent(0, [1], model=model)
        ag.assumed[1] = plan(1, 40.0)
        x0 = np.array([90.0, 0, 0, 0])
        warm = np.zeros(5)
        _, _, traj = ag._objective(x0, warm, model.steady(TEN))
        stage0 = stage_cost_sum(traj[0], warm, ag.neighbor_plans(), D, ag.cfg)
        yaws, states, naive, *_ = ag.solve_dynamic(x0, model.steady(TEN), warm)
        assert naive <= stage0 + 1e-12


class TestInformedCost:
    def setup_method(self):
        self.ag = agent(0, [1])
        self.own = plan(0, 0.0)

    def naive(self, neighbor):
        self.ag.assumed[1] = neighbor
        return self.ag.informed_dynamic_cost(self.own)

    def test_unchanged(self):
        n = self.naive(plan(1, 30.0))
        assert self.ag.informed_dynamic_cost(self.own) == n

    def test_neighbor_moves_away(self):
        n = self.naive(plan(1, 30.0))
        self.ag.assumed[1] = plan(1, 130.0)
        assert self.ag.informed_dynamic_cost(self.own) < n

    def test_synthetic_conflict(self):
        # both planned to clear each other, neighbor then moved onto our side
        n = self.naive(plan(1, -63.0))
        self.ag.assumed[1] = plan(1, -5.0)
        assert self.ag.informed_dynamic_cost(self.own) > n
        assert self.ag.informed_dynamic_cost(self.own) == pytest.approx(5 * rotor_overlap_area(0, -5, D))


class TestHierarchy:
    cfg = ControllerConfig()

    def test_keep_on_agreement(self):
        assert update_hierarchy_level(2, 1.0, 1.0, np.random.default_rng(0), self.cfg) == 2

    def test_tolerance_boundary(self):
        rng = np.random.default_rng(0)
        assert update_hierarchy_level(2, 1.0, 1.0 + 0.5e-6, rng, self.cfg) == 2

    def test_uniform_redraw(self):
        rng = np.random.default_rng(0)
        draws = np.array([update_hierarchy_level(1, 0.0, 1.0, rng, self.cfg) for _ in range(10_000)])
        freq = np.bincount(draws, minlength=3)[1:] / draws.size
        sd = math.sqrt(0.25 / draws.size)
        assert set(np.unique(draws)) == {1, 2}
        assert np.all(np.abs(freq - 0.5) <= 3 * sd)


class TestMessageBus:
    def test_neighbors_only(self):
        bus = MessageBus(make_row_farm(3))
        bus.broadcast(plan(0, 1.0))
        assert 0 in bus.latest(1) and bus.latest(2) == {}
        bus.broadcast(plan(0, 2.0))
        assert bus.latest(1)[0].states[0, 1] == 2.0
        bus.clear()
        assert bus.latest(1) == {}


class TestCoordination:
    def test_single_agent_equals_local_decision(self):
        farm = make_row_farm(1)
        model = LinearPlatformModel()
        x = np.array([[30.0, 20.0, 0.0, 0.0]])
        yaws, recs = DistributedController(farm, [model], seed=0).step(x)
        local = agent(model=model)
        res = local.solve_stationary(x[0])
        u, *_ = local.solve_dynamic(x[0], res.x_s, np.zeros(5))
        assert yaws[0] == pytest.approx(u[0])
        assert not recs[0].conflict

    @pytest.mark.parametrize("n", [2, 3, 5])
    def test_alternating_levels_never_conflict(self, n, monkeypatch):
        farm = make_row_farm(n)
        models = [OffsetModel(882.0 * k) for k in range(n)]
        levels = [1 + k % 2 for k in range(n)]
        ctrl = DistributedController(farm, models, seed=4, levels=levels)
        x = np.array([[882.0 * k + 90.0, 0, 0, 0] for k in range(n)])
        for _ in range(12):
            yaws, recs = ctrl.step(x)
            assert not any(r.conflict or r.stationary_conflict for r in recs)
            assert [ag.level for ag in ctrl.agents] == levels
            x = exact_plant(models, x, yaws)
        # neighbors end on opposite sides of the row
        assert np.all(x[1:, 1] * x[:-1, 1] < 0)

    def test_same_level_conflicts_then_separates(self):
        farm = make_row_farm(2)
        models = [OffsetModel(0.0), OffsetModel(882.0)]
        separated = 0
        conflicted = 0
        for seed in range(20):
            ctrl = DistributedController(farm, models, seed=seed, levels=[1, 1])
            x = np.array([[90.0, 0, 0, 0], [972.0, 0, 0, 0]])
            first = True
            for _ in range(5):
                yaws, recs = ctrl.step(x)
                if first:
                    conflicted += any(r.conflict or r.stationary_conflict for r in recs)
                    first = False
                x = exact_plant(models, x, yaws)
            separated += ctrl.agents[0].level != ctrl.agents[1].level
        assert conflicted > 0
        assert separated >= 18

    def test_failed_solve_holds_input(self, monkeypatch):
        farm = make_row_farm(2)
        ctrl = DistributedController(farm, [OffsetModel(0.0), OffsetModel(882.0)], seed=0, levels=[1, 2])
        x = np.array([[90.0, 0, 0, 0], [972.0, 0, 0, 0]])
        first, _ = ctrl.step(x)

        def boom(*a, **k):
            raise FloatingPointError("surrogate blew up")

        monkeypatch.setattr(ctrl.agents[1], "solve_dynamic", boom)
        second, _ = ctrl.step(x)
        assert second[1] == first[1]
