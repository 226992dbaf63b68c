"""Farm layout, neighbor topology and rotor-overlap geometry.

Everything here is a pure function over frozen dataclasses so the simulator
and the controller agents can share it freely.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np


class ConfigurationError(ValueError):
    """Raised for an invalid farm, mooring or experiment configuration."""


@dataclass(frozen=True)
class TurbineSpec:
    rotor_diameter: float = 126.0
    air_density: float = 1.225
    effective_mass: float = 1.5e7
    hydro_drag_coeff: float = 5e5

    def __post_init__(self):
        if self.rotor_diameter <= 0:
            raise ConfigurationError("rotor_diameter must be positive")
        if self.air_density <= 0:
            raise ConfigurationError("air_density must be positive")
        if self.effective_mass <= 0:
            raise ConfigurationError("effective_mass must be positive")
        if self.hydro_drag_coeff < 0:
            raise ConfigurationError("hydro_drag_coeff must be non-negative")

    @property
    def hub_area(self) -> float:
        return math.pi * (0.5 * self.rotor_diameter) ** 2


@dataclass(frozen=True)
class MooringSpec:
    """Catenary mooring layout of one platform.

    ``anchor_radius`` is the horizontal fairlead-to-anchor distance at the
    neutral position. Line 0 points upwind (anchor on the -x side); the
    remaining lines are spread evenly around the platform.
    """

    line_length: float = 950.0
    water_depth: float = 200.0
    line_weight_per_length: float = 1112.0
    anchor_radius: float = 795.0
    num_lines: int = 3

    def __post_init__(self):
        if self.line_length <= self.water_depth:
            raise ConfigurationError("line_length must exceed water_depth")
        if self.num_lines < 3:
            raise ConfigurationError("at least three mooring lines are required")
        if self.line_weight_per_length <= 0:
            raise ConfigurationError("line_weight_per_length must be positive")
        if self.anchor_radius <= 0:
            raise ConfigurationError("anchor_radius must be positive")

    def anchor_angles(self) -> np.ndarray:
        return math.pi + 2.0 * math.pi * np.arange(self.num_lines) / self.num_lines


@dataclass(frozen=True)
class TurbineState:
    x: float
    y: float
    v_x: float = 0.0
    v_y: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.v_x, self.v_y], dtype=float)

    @classmethod
    def from_array(cls, values) -> "TurbineState":
        x, y, vx, vy = (float(v) for v in values)
        return cls(x, y, vx, vy)


@dataclass(frozen=True)
class TurbineInput:
    """Axial induction factor ``a`` and yaw angle ``yaw`` in radians (CCW from +x)."""

    a: float = 1.0 / 3.0
    yaw: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.yaw], dtype=float)


GREEDY_INPUT = TurbineInput(1.0 / 3.0, 0.0)
REFERENCE_INPUT = np.array([1.0 / 3.0, 0.0])


@dataclass(frozen=True)
class TurbineSite:
    neutral_x: float
    neutral_y: float
    spec: TurbineSpec = field(default_factory=TurbineSpec)
    mooring: MooringSpec = field(default_factory=MooringSpec)

    @property
    def neutral(self) -> np.ndarray:
        return np.array([self.neutral_x, self.neutral_y])


@dataclass(frozen=True)
class FarmConfig:
    turbines: tuple[TurbineSite, ...]
    adjacency: tuple[frozenset[int], ...]
    spacing_diameters: float = 7.0

    def __post_init__(self):
        if len(self.turbines) == 0:
            raise ConfigurationError("a farm needs at least one turbine")
        if len(self.adjacency) != len(self.turbines):
            raise ConfigurationError("adjacency must list one neighbor set per turbine")
        for i, nbrs in enumerate(self.adjacency):
            for j in nbrs:
                if j == i:
                    raise ConfigurationError(f"turbine {i} lists itself as a neighbor")
                if not 0 <= j < len(self.turbines):
                    raise ConfigurationError(f"neighbor index {j} out of range")
                if i not in self.adjacency[j]:
                    raise ConfigurationError(f"adjacency not symmetric for pair ({i}, {j})")

    @property
    def n_turbines(self) -> int:
        return len(self.turbines)

    def neighbors(self, i: int) -> list[int]:
        return sorted(self.adjacency[i])

    def neutral_positions(self) -> np.ndarray:
        return np.array([t.neutral for t in self.turbines])

    # -- JSON ------------------------------------------------------------

    def to_dict(self) -> dict:
        first = self.turbines[0]
        return {
            "spacing_diameters": self.spacing_diameters,
            "spec": asdict(first.spec),
            "mooring": asdict(first.mooring),
            "turbines": [
                {
                    "neutral_x": t.neutral_x,
                    "neutral_y": t.neutral_y,
                    "neighbors": self.neighbors(i),
                    **({"spec": asdict(t.spec)} if t.spec != first.spec else {}),
                    **({"mooring": asdict(t.mooring)} if t.mooring != first.mooring else {}),
                }
                for i, t in enumerate(self.turbines)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FarmConfig":
        try:
            spec = TurbineSpec(**data.get("spec", {}))
            mooring = MooringSpec(**data.get("mooring", {}))
            sites, adjacency = [], []
            for entry in data["turbines"]:
                sites.append(
                    TurbineSite(
                        float(entry["neutral_x"]),
                        float(entry["neutral_y"]),
                        TurbineSpec(**entry["spec"]) if "spec" in entry else spec,
                        MooringSpec(**entry["mooring"]) if "mooring" in entry else mooring,
                    )
                )
                adjacency.append(frozenset(int(j) for j in entry.get("neighbors", [])))
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed farm configuration: {exc}") from exc
        return cls(tuple(sites), tuple(adjacency), float(data.get("spacing_diameters", 7.0)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "FarmConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def make_row_farm(
    n: int,
    spacing_diameters: float = 7.0,
    spec: TurbineSpec | None = None,
    mooring: MooringSpec | None = None,
) -> FarmConfig:
    """Build a 1 x n row aligned with +x, consecutive turbines adjacent."""
    if n < 1:
        raise ConfigurationError("row farm needs n >= 1")
    if spacing_diameters <= 0:
        raise ConfigurationError("spacing_diameters must be positive")
    spec = spec or TurbineSpec()
    mooring = mooring or MooringSpec()
    spacing = spacing_diameters * spec.rotor_diameter
    sites = tuple(TurbineSite(i * spacing, 0.0, spec, mooring) for i in range(n))
    adjacency = tuple(
        frozenset(j for j in (i - 1, i + 1) if 0 <= j < n) for i in range(n)
    )
    return FarmConfig(sites, adjacency, spacing_diameters)


def with_mooring(cfg: FarmConfig, **changes) -> FarmConfig:
    """Copy of ``cfg`` with every turbine's mooring updated by ``changes``."""
    sites = tuple(replace(t, mooring=replace(t.mooring, **changes)) for t in cfg.turbines)
    return replace(cfg, turbines=sites)


def rotor_overlap_area(y_i: float, y_j: float, D: float):
    """Lens area shared by two rotor discs offset by ``|y_i - y_j|``, over one disc area.

    Works elementwise on arrays.
    """
    r = 0.5 * D
    d = np.minimum(np.abs(np.asarray(y_i, dtype=float) - np.asarray(y_j, dtype=float)), D)
    lens = 2.0 * r * r * np.arccos(d / D) - 0.5 * d * np.sqrt(np.maximum(D * D - d * d, 0.0))
    out = lens / (math.pi * r * r)
    return float(out) if np.ndim(out) == 0 else out


def input_penalty(u, Q: np.ndarray) -> float:
    """Quadratic deviation of (a, yaw) from the greedy reference."""
    du = np.asarray(u, dtype=float) - REFERENCE_INPUT
    return float(du @ Q @ du)


def neighborhood_cost(
    i: int,
    states: Sequence[TurbineState],
    inputs: Sequence[TurbineInput],
    cfg: FarmConfig,
    Q: np.ndarray | None = None,
) -> float:
    """Stage cost of turbine ``i`` at one instant: own input penalty plus
    shared overlap and neighbor input penalties."""
    Q = np.eye(2) if Q is None else np.asarray(Q, dtype=float)
    nbrs = cfg.neighbors(i)
    D = cfg.turbines[i].spec.rotor_diameter
    cost = input_penalty(inputs[i].as_array(), Q)
    for j in nbrs:
        cost += rotor_overlap_area(states[i].y, states[j].y, D) / len(nbrs)
        cost += input_penalty(inputs[j].as_array(), Q)
    return cost
