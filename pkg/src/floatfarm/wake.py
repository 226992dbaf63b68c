"""Lagrangian wake transport.

Each turbine sheds a wake cross-section every emission period. Sections are
advected downstream, expand linearly, lose centerline deficit so that the
momentum deficit is conserved, and drift sideways with a decaying skew.
Foreign wakes are sampled with a Gaussian profile and combined by root-sum-
square of velocity deficits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from floatfarm.dynamics import _check_induction, rotor_axis, thrust_coefficient
from floatfarm.farm import TurbineInput, TurbineSpec, TurbineState

EXPANSION_RATE = 0.05
CUTOFF_DIAMETERS = 20.0
ROTOR_POINTS = 9


@dataclass(frozen=True)
class WakeElement:
    source: int
    x_station: float
    centerline_y: float
    diameter: float
    centerline_deficit: float
    lateral_velocity: float
    age: float = 0.0
    skew_tangent: float = 0.0  # tan of the initial skew angle


COLUMNS = ("x", "y", "diameter", "deficit", "lateral", "age", "origin", "deficit0", "tan0")
X, Y, DIA, DEF, LAT, AGE, ORIG, DEF0, TAN0 = range(len(COLUMNS))


class SourceWake:
    """One turbine's wake as a (9, n) array, columns ordered by increasing x
    (newest section first). Rows follow ``COLUMNS``."""

    def __init__(self, data: np.ndarray):
        self.data = data

    @classmethod
    def empty(cls) -> "SourceWake":
        return cls(np.empty((len(COLUMNS), 0)))

    def __len__(self) -> int:
        return self.data.shape[1]

    def __getattr__(self, name):
        try:
            return self.__dict__["data"][COLUMNS.index(name)]
        except ValueError:
            raise AttributeError(name) from None

    def copy(self) -> "SourceWake":
        return SourceWake(self.data.copy())

    def prepend(self, el: WakeElement) -> "SourceWake":
        head = np.array([el.x_station, el.centerline_y, el.diameter, el.centerline_deficit,
                         el.lateral_velocity, el.age, el.x_station, el.centerline_deficit,
                         el.skew_tangent])
        return SourceWake(np.concatenate((head[:, None], self.data), axis=1))

    def elements(self, source: int) -> list[WakeElement]:
        return [
            WakeElement(source, *(float(v) for v in col[:6]), float(col[TAN0]))
            for col in self.data.T
        ]


@dataclass
class WakeField:
    wakes: list[SourceWake] = field(default_factory=list)

    @classmethod
    def empty(cls, n_turbines: int) -> "WakeField":
        return cls([SourceWake.empty() for _ in range(n_turbines)])

    def copy(self) -> "WakeField":
        return WakeField([w.copy() for w in self.wakes])

    def with_element(self, el: WakeElement) -> "WakeField":
        wakes = list(self.wakes)
        wakes[el.source] = wakes[el.source].prepend(el)
        return WakeField(wakes)

    def n_elements(self) -> int:
        return sum(len(w) for w in self.wakes)

    def rows(self):
        """(source, x, y_centerline, diameter, deficit) for CSV dumps."""
        for s, w in enumerate(self.wakes):
            for x, y, d, dU in zip(w.x, w.y, w.diameter, w.deficit):
                yield s, float(x), float(y), float(d), float(dU)


def initial_skew(a: float, yaw: float) -> float:
    """Initial wake skew angle from the lateral momentum balance."""
    return 0.5 * thrust_coefficient(a) * math.cos(yaw) ** 2 * math.sin(yaw)


def emit_wake_element(
    source: int,
    state: TurbineState,
    inp: TurbineInput,
    v_eff,
    spec: TurbineSpec,
) -> WakeElement:
    """Fresh wake section at the rotor.

    The centerline deficit follows axial momentum (``2 a U_n``); the lateral
    velocity combines the initial skew with the crosswind wind component.
    """
    _check_induction(inp.a)
    v = np.asarray(v_eff, dtype=float)
    u_n = max(float(v @ rotor_axis(inp.yaw)), 0.0)
    deficit = 2.0 * inp.a * u_n
    tan0 = math.tan(initial_skew(inp.a, inp.yaw))
    u_adv = v[0] - 0.5 * deficit
    return WakeElement(
        source=source,
        x_station=state.x,
        centerline_y=state.y,
        diameter=spec.rotor_diameter,
        centerline_deficit=deficit,
        lateral_velocity=u_adv * tan0 + v[1],
        age=0.0,
        skew_tangent=tan0,
    )


@numba.njit(cache=True)
def _advect(data, u_inf, v_inf, dt, D, k_w, cutoff):
    n = data.shape[1]
    out = np.empty_like(data)
    m = 0
    for j in range(n):
        x = data[X, j] + (u_inf - 0.5 * data[DEF, j]) * dt
        xi = max(x - data[ORIG, j], 0.0)
        if xi > cutoff:
            continue
        dia = D + 2.0 * k_w * xi
        deficit = data[DEF0, j] * (D / dia) ** 2
        tan_theta = data[TAN0, j] / (1.0 + 2.0 * k_w * xi / D) ** 2
        out[X, m] = x
        out[Y, m] = data[Y, j] + data[LAT, j] * dt
        out[DIA, m] = dia
        out[DEF, m] = deficit
        out[LAT, m] = (u_inf - 0.5 * deficit) * tan_theta + v_inf
        out[AGE, m] = data[AGE, j] + dt
        out[ORIG, m] = data[ORIG, j]
        out[DEF0, m] = data[DEF0, j]
        out[TAN0, m] = data[TAN0, j]
        m += 1
    return out[:, :m].copy()


def advect_wakes(
    wake_field: WakeField,
    wind,
    dt: float,
    rotor_diameter: float,
    expansion_rate: float = EXPANSION_RATE,
    cutoff_diameters: float = CUTOFF_DIAMETERS,
) -> WakeField:
    """Move every section downstream by ``dt`` and return the new field.

    Sections travel at the mean of free stream and centerline wake speed,
    expand at ``expansion_rate`` per unit distance on each side and are
    dropped beyond ``cutoff_diameters`` rotor diameters of travel.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    u_inf, v_inf = float(wind[0]), float(wind[1])
    cutoff = cutoff_diameters * rotor_diameter
    return WakeField([
        SourceWake(_advect(w.data, u_inf, v_inf, dt, rotor_diameter, expansion_rate, cutoff))
        for w in wake_field.wakes
    ])


@numba.njit(cache=True)
def _deficit_sq(data, px, py, total):
    """Add the squared Gaussian deficit of one wake at (px, py[:]) into ``total``."""
    n = data.shape[1]
    if n < 2 or px < data[X, 0] or px > data[X, n - 1]:
        return
    k = np.searchsorted(data[X], px, side="right")
    k = min(max(k, 1), n - 1)
    x0 = data[X, k - 1]
    x1 = data[X, k]
    t = 0.0 if x1 <= x0 else (px - x0) / (x1 - x0)
    yc = data[Y, k - 1] + t * (data[Y, k] - data[Y, k - 1])
    dia = data[DIA, k - 1] + t * (data[DIA, k] - data[DIA, k - 1])
    peak = data[DEF, k - 1] + t * (data[DEF, k] - data[DEF, k - 1])
    sigma = 0.25 * dia
    for q in range(py.size):
        d = peak * np.exp(-((py[q] - yc) ** 2) / (2.0 * sigma * sigma))
        total[q] += d * d


def deficit_at(wake_field: WakeField, px: float, py, exclude: int | None = None):
    """Combined velocity deficit of all foreign wakes at (px, py).

    Each wake is interpolated linearly between the two sections bracketing
    ``px`` and given a Gaussian crosswind profile with sigma = diameter / 4;
    wakes combine as the root-sum-square of their deficits. ``py`` may be an
    array of crosswind positions sharing the same x.
    """
    py_arr = np.atleast_1d(np.asarray(py, dtype=float))
    total = np.zeros_like(py_arr)
    for s, w in enumerate(wake_field.wakes):
        if s != exclude:
            _deficit_sq(w.data, float(px), py_arr, total)
    out = np.sqrt(total)
    return float(out[0]) if np.ndim(py) == 0 else out


_UNIT_SPAN = np.linspace(-0.5, 0.5, ROTOR_POINTS)


def rotor_points(y_hub: float, rotor_diameter: float, n: int = ROTOR_POINTS) -> np.ndarray:
    """Equally spaced crosswind sample points spanning the rotor disc."""
    unit = _UNIT_SPAN if n == ROTOR_POINTS else np.linspace(-0.5, 0.5, n)
    return y_hub + rotor_diameter * unit


def effective_velocity(
    wake_field: WakeField,
    turbine: int,
    states,
    wind,
    spec: TurbineSpec,
) -> np.ndarray:
    """Rotor-averaged incident wind: free stream minus mean deficit across the disc.

    ``states`` holds one row ``(x, y, vx, vy)`` (or a TurbineState) per turbine.
    """
    st = states[turbine]
    x, y = (st.x, st.y) if isinstance(st, TurbineState) else (st[0], st[1])
    deficits = deficit_at(wake_field, x, rotor_points(y, spec.rotor_diameter), exclude=turbine)
    mean = float(deficits.sum()) / deficits.size
    u = float(wind[0])
    return np.array([max(u - mean, 0.0), float(wind[1])])
