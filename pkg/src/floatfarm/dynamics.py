"""Planar platform dynamics: actuator-disc thrust, lumped Morison drag and
quasi-static catenary mooring, integrated with classical RK4."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from floatfarm.farm import MooringSpec, TurbineInput, TurbineSpec, TurbineState


class InputDomainError(ValueError):
    """Axial induction factor outside (0, 0.5)."""


class MooringLimitError(RuntimeError):
    """The requested fairlead-anchor span cannot be reached by the line."""


class SimulationDiverged(RuntimeError):
    """A platform state became non-finite."""


H_MIN, H_MAX = 1.0, 1e9


@dataclass(frozen=True)
class ForceBreakdown:
    thrust: np.ndarray
    hydro: np.ndarray
    mooring: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.thrust + self.hydro + self.mooring


@dataclass(frozen=True)
class CatenarySolution:
    horizontal_tension: float
    vertical_tension: float
    grounded_length: float
    regime: str  # "partially-resting" | "fully-lifted"


def _check_induction(a: float) -> None:
    if not 0.0 < a < 0.5:
        raise InputDomainError(f"axial induction factor {a} outside (0, 0.5)")


def thrust_coefficient(a: float) -> float:
    return 4.0 * a * (1.0 - a)


def power_coefficient(a: float) -> float:
    return 4.0 * a * (1.0 - a) ** 2


def rotor_axis(yaw: float) -> np.ndarray:
    return np.array([math.cos(yaw), math.sin(yaw)])


def thrust_force(v_eff, inp: TurbineInput, spec: TurbineSpec) -> np.ndarray:
    """Actuator-disc thrust along the rotor axis, driven by the axial wind component."""
    _check_induction(inp.a)
    n = rotor_axis(inp.yaw)
    u_n = float(np.dot(v_eff, n))
    return 0.5 * spec.air_density * spec.hub_area * thrust_coefficient(inp.a) * u_n * abs(u_n) * n


def power_output(v_eff, inp: TurbineInput, spec: TurbineSpec) -> float:
    """Rotor power; yaw loss enters through the cube of the axial wind component."""
    _check_induction(inp.a)
    u_n = float(np.dot(v_eff, rotor_axis(inp.yaw)))
    p = 0.5 * spec.air_density * spec.hub_area * power_coefficient(inp.a) * u_n**3
    return max(p, 0.0)


def hydro_force(v_platform, spec: TurbineSpec) -> np.ndarray:
    v = np.asarray(v_platform, dtype=float)
    return -spec.hydro_drag_coeff * np.linalg.norm(v) * v


# -- catenary -------------------------------------------------------------


def _fully_lifted_vertical(H: float, m: MooringSpec) -> float:
    """Fairlead vertical tension of a line lifted clear of the seabed."""
    w, L, h = m.line_weight_per_length, m.line_length, m.water_depth
    a = H / w

    def depth_of(V):
        return a * (math.hypot(1.0, V / H) - math.hypot(1.0, (V - w * L) / H))

    lo, hi = w * L, w * L + max(H, w * L)
    while depth_of(hi) < h:
        hi = w * L + 2.0 * (hi - w * L)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if depth_of(mid) < h:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-9 * hi:
            break
    return 0.5 * (lo + hi)


def catenary_geometry(H: float, m: MooringSpec) -> tuple[float, CatenarySolution]:
    """Horizontal span produced by horizontal tension ``H`` and the matching solution."""
    w, L, h = m.line_weight_per_length, m.line_length, m.water_depth
    a = H / w
    suspended = math.sqrt(h * h + 2.0 * a * h)
    if suspended <= L:
        span = L - suspended + a * math.asinh(suspended / a)
        return span, CatenarySolution(H, w * suspended, L - suspended, "partially-resting")
    V = _fully_lifted_vertical(H, m)
    span = a * (math.asinh(V / H) - math.asinh((V - w * L) / H))
    return span, CatenarySolution(H, V, 0.0, "fully-lifted")


def max_span(m: MooringSpec) -> float:
    return catenary_geometry(H_MAX, m)[0]


def solve_catenary(horizontal_span: float, mooring: MooringSpec, tol: float = 1e-3) -> CatenarySolution:
    """Bisect the horizontal tension that reproduces ``horizontal_span``.

    Spans shorter than the slack limit (line lying on the seabed) return the
    lower tension bound.
    """
    if horizontal_span <= 0.0:
        raise MooringLimitError(f"span {horizontal_span} must be positive")
    if horizontal_span >= max_span(mooring):
        raise MooringLimitError(
            f"span {horizontal_span:.2f} m beyond reachable maximum {max_span(mooring):.2f} m"
        )
    lo, hi = H_MIN, H_MAX
    span_lo, sol = catenary_geometry(lo, mooring)
    if horizontal_span <= span_lo:
        return sol
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        span, sol = catenary_geometry(mid, mooring)
        if abs(span - horizontal_span) < tol:
            return sol
        if span < horizontal_span:
            lo = mid
        else:
            hi = mid
    return sol


@functools.lru_cache(maxsize=16)
def tension_table(mooring: MooringSpec, n: int = 4000) -> tuple[np.ndarray, np.ndarray]:
    """Span -> horizontal tension lookup, dense enough for linear interpolation.

    Built by sweeping tension (log-spaced) so that both ends of the curve are
    resolved; the forward map is exact so no bisection is needed here.
    """
    tensions = np.geomspace(H_MIN, 5e7, n)
    spans = np.array([catenary_geometry(H, mooring)[0] for H in tensions])
    return spans, tensions


def line_tensions(spans: np.ndarray, mooring: MooringSpec) -> np.ndarray:
    spans_tab, h_tab = tension_table(mooring)
    if np.any(spans >= spans_tab[-1]):
        raise MooringLimitError(
            f"span {float(np.max(spans)):.2f} m beyond mooring working range ({spans_tab[-1]:.2f} m)"
        )
    return np.interp(spans, spans_tab, h_tab)


def anchor_positions(neutral, mooring: MooringSpec) -> np.ndarray:
    ang = mooring.anchor_angles()
    return np.asarray(neutral, dtype=float) + mooring.anchor_radius * np.column_stack(
        (np.cos(ang), np.sin(ang))
    )


def mooring_force(position, neutral, mooring: MooringSpec) -> np.ndarray:
    """Net horizontal pull of all lines, each directed from fairlead toward its anchor."""
    to_anchor = anchor_positions(neutral, mooring) - np.asarray(position, dtype=float)
    spans = np.linalg.norm(to_anchor, axis=1)
    H = line_tensions(spans, mooring)
    return (H / spans) @ to_anchor


# -- integration ------------------------------------------------------------


def force_breakdown(state_vec, inp: TurbineInput, v_eff, spec: TurbineSpec, mooring: MooringSpec, neutral) -> ForceBreakdown:
    state_vec = np.asarray(state_vec, dtype=float)
    return ForceBreakdown(
        thrust_force(np.asarray(v_eff) - state_vec[2:], inp, spec),
        hydro_force(state_vec[2:], spec),
        mooring_force(state_vec[:2], neutral, mooring),
    )


def _derivative(s: np.ndarray, inp: TurbineInput, v_eff, spec: TurbineSpec, mooring: MooringSpec, neutral) -> np.ndarray:
    # thrust sees the wind relative to the moving platform (aerodynamic damping)
    f = (
        thrust_force(v_eff - s[2:], inp, spec)
        + hydro_force(s[2:], spec)
        + mooring_force(s[:2], neutral, mooring)
    )
    return np.concatenate((s[2:], f / spec.effective_mass))


def step_platform(
    state: TurbineState,
    inp: TurbineInput,
    v_eff,
    spec: TurbineSpec,
    mooring: MooringSpec,
    neutral,
    dt: float = 1.0,
) -> TurbineState:
    """Advance one platform by ``dt`` seconds with RK4; forces are re-evaluated
    at every stage, the incident wind is held fixed over the step."""
    if not 0.0 < dt <= 5.0:
        raise ValueError("dt must lie in (0, 5] s")
    return TurbineState.from_array(rk4(state.as_array(), inp, v_eff, spec, mooring, neutral, dt))


def rk4(s: np.ndarray, inp: TurbineInput, v_eff, spec, mooring, neutral, dt: float) -> np.ndarray:
    v_eff = np.asarray(v_eff, dtype=float)
    k1 = _derivative(s, inp, v_eff, spec, mooring, neutral)
    k2 = _derivative(s + 0.5 * dt * k1, inp, v_eff, spec, mooring, neutral)
    k3 = _derivative(s + 0.5 * dt * k2, inp, v_eff, spec, mooring, neutral)
    k4 = _derivative(s + dt * k3, inp, v_eff, spec, mooring, neutral)
    out = s + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise SimulationDiverged(f"non-finite platform state {out}")
    return out
