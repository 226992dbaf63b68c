"""Coupled farm stepping: incident wind from wakes, platform motion, wake transport."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from floatfarm.dynamics import (
    MooringLimitError,
    SimulationDiverged,
    _check_induction,
    anchor_positions,
    power_coefficient,
    tension_table,
    thrust_coefficient,
)
from floatfarm.farm import FarmConfig, TurbineInput, TurbineState
from floatfarm.wake import WakeField, advect_wakes, effective_velocity, emit_wake_element

EMISSION_PERIOD = 2.0


@dataclass
class FarmState:
    t: float
    states: np.ndarray  # (N, 4) rows of x, y, vx, vy
    wake: WakeField
    next_emission: float = 0.0
    powers: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def copy(self) -> "FarmState":
        return FarmState(self.t, self.states.copy(), self.wake.copy(), self.next_emission, self.powers.copy())

    def turbine_state(self, i: int) -> TurbineState:
        return TurbineState.from_array(self.states[i])


@numba.njit(cache=True)
def _interp_tension(span, span_tab, h_tab):
    k = np.searchsorted(span_tab, span)
    if k <= 0:
        return h_tab[0]
    t = (span - span_tab[k - 1]) / (span_tab[k] - span_tab[k - 1])
    return h_tab[k - 1] + t * (h_tab[k] - h_tab[k - 1])


@numba.njit(cache=True)
def _derivative(s, ct, axis, v_eff, half_rho_area, mass, drag, anchors, span_tabs, h_tabs, table_idx, out):
    n = s.shape[0]
    for i in range(n):
        vx, vy = s[i, 2], s[i, 3]
        u_n = (v_eff[i, 0] - vx) * axis[i, 0] + (v_eff[i, 1] - vy) * axis[i, 1]
        t = half_rho_area[i] * ct[i] * u_n * abs(u_n)
        speed = np.sqrt(vx * vx + vy * vy)
        fx = t * axis[i, 0] - drag[i] * speed * vx
        fy = t * axis[i, 1] - drag[i] * speed * vy
        tab = table_idx[i]
        for l in range(anchors.shape[1]):
            dx = anchors[i, l, 0] - s[i, 0]
            dy = anchors[i, l, 1] - s[i, 1]
            span = np.sqrt(dx * dx + dy * dy)
            if span >= span_tabs[tab, -1]:
                return False
            h = _interp_tension(span, span_tabs[tab], h_tabs[tab])
            fx += h * dx / span
            fy += h * dy / span
        out[i, 0] = vx
        out[i, 1] = vy
        out[i, 2] = fx / mass[i]
        out[i, 3] = fy / mass[i]
    return True


@numba.njit(cache=True)
def _rk4(s, ct, axis, v_eff, half_rho_area, mass, drag, anchors, span_tabs, h_tabs, table_idx, dt):
    k1 = np.empty_like(s)
    k2 = np.empty_like(s)
    k3 = np.empty_like(s)
    k4 = np.empty_like(s)
    ok = _derivative(s, ct, axis, v_eff, half_rho_area, mass, drag, anchors, span_tabs, h_tabs, table_idx, k1)
    ok = ok and _derivative(s + 0.5 * dt * k1, ct, axis, v_eff, half_rho_area, mass, drag, anchors, span_tabs, h_tabs, table_idx, k2)
    ok = ok and _derivative(s + 0.5 * dt * k2, ct, axis, v_eff, half_rho_area, mass, drag, anchors, span_tabs, h_tabs, table_idx, k3)
    ok = ok and _derivative(s + dt * k3, ct, axis, v_eff, half_rho_area, mass, drag, anchors, span_tabs, h_tabs, table_idx, k4)
    return ok, s + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class _PlatformBank:
    """Per-farm constants laid out for the compiled RK4 kernel."""

    def __init__(self, cfg: FarmConfig):
        sites = cfg.turbines
        self.half_rho_area = np.array([0.5 * t.spec.air_density * t.spec.hub_area for t in sites])
        self.mass = np.array([t.spec.effective_mass for t in sites])
        self.drag = np.array([t.spec.hydro_drag_coeff for t in sites])
        self.anchors = np.stack([anchor_positions(t.neutral, t.mooring) for t in sites])
        moorings = list(dict.fromkeys(t.mooring for t in sites))
        self.moorings = moorings
        self.table_idx = np.array([moorings.index(t.mooring) for t in sites], dtype=np.int64)
        tables = [tension_table(m) for m in moorings]
        self.span_tabs = np.stack([tab[0] for tab in tables])
        self.h_tabs = np.stack([tab[1] for tab in tables])

    def rk4(self, s, ct, axis, v_eff, dt):
        ok, out = _rk4(
            s, ct, axis, v_eff, self.half_rho_area, self.mass, self.drag, self.anchors,
            self.span_tabs, self.h_tabs, self.table_idx, dt,
        )
        if not ok:
            raise MooringLimitError("platform excursion beyond mooring working range")
        if not np.all(np.isfinite(out)):
            raise SimulationDiverged("non-finite platform state")
        return out


class FarmSimulator:
    """Stateless stepping engine bound to one farm configuration."""

    def __init__(self, cfg: FarmConfig, dt: float = 1.0, emission_period: float = EMISSION_PERIOD):
        if not 0.0 < dt <= 5.0:
            raise ValueError("dt must lie in (0, 5] s")
        self.cfg = cfg
        self.dt = dt
        self.emission_period = emission_period
        self.bank = _PlatformBank(cfg)
        self.rotor_diameter = cfg.turbines[0].spec.rotor_diameter

    def initial_state(self, states: np.ndarray | None = None) -> FarmState:
        if states is None:
            states = np.hstack((self.cfg.neutral_positions(), np.zeros((self.cfg.n_turbines, 2))))
        n = self.cfg.n_turbines
        return FarmState(0.0, np.array(states, dtype=float), WakeField.empty(n), 0.0, np.zeros(n))

    def effective_velocities(self, fs: FarmState, wind) -> np.ndarray:
        return np.array([
            effective_velocity(fs.wake, i, fs.states, wind, site.spec)
            for i, site in enumerate(self.cfg.turbines)
        ])

    def instantaneous_power(self, fs: FarmState, inputs: Sequence[TurbineInput], wind) -> np.ndarray:
        """Per-turbine power for the current state without advancing time."""
        a = np.array([u.a for u in inputs])
        yaw = np.array([u.yaw for u in inputs])
        axis = np.column_stack((np.cos(yaw), np.sin(yaw)))
        v_eff = self.effective_velocities(fs, np.asarray(wind, dtype=float))
        u_n = np.einsum("nk,nk->n", v_eff, axis)
        return np.maximum(self.bank.half_rho_area * power_coefficient(a) * u_n**3, 0.0)

    def step(self, fs: FarmState, inputs: Sequence[TurbineInput], wind) -> FarmState:
        """One coupled step; returns a new state carrying per-turbine power."""
        wind = np.asarray(wind, dtype=float)
        a = np.array([u.a for u in inputs])
        yaw = np.array([u.yaw for u in inputs])
        for ai in a:
            _check_induction(ai)
        axis = np.column_stack((np.cos(yaw), np.sin(yaw)))
        ct = thrust_coefficient(a)

        v_eff = self.effective_velocities(fs, wind)
        u_n = np.einsum("nk,nk->n", v_eff, axis)
        powers = np.maximum(self.bank.half_rho_area * power_coefficient(a) * u_n**3, 0.0)

        states = self.bank.rk4(fs.states, ct, axis, v_eff, self.dt)
        wake = advect_wakes(fs.wake, wind, self.dt, self.rotor_diameter)
        t = fs.t + self.dt
        next_emission = fs.next_emission
        if t >= next_emission - 1e-9:
            for i, site in enumerate(self.cfg.turbines):
                el = emit_wake_element(i, TurbineState.from_array(states[i]), inputs[i], wind, site.spec)
                wake = wake.with_element(el)
            next_emission += self.emission_period
        return FarmState(t, states, wake, next_emission, powers)

    def run(self, fs: FarmState, inputs: Sequence[TurbineInput], wind_fn, duration: float) -> FarmState:
        """Hold ``inputs`` for ``duration`` seconds; ``wind_fn(t)`` gives the free stream."""
        n = int(round(duration / self.dt))
        for _ in range(n):
            fs = self.step(fs, inputs, wind_fn(fs.t))
        return fs


def step_farm(fs: FarmState, inputs, wind_t, dt: float, cfg: FarmConfig) -> FarmState:
    """Functional form of :meth:`FarmSimulator.step`."""
    return FarmSimulator(cfg, dt).step(fs, inputs, wind_t)
