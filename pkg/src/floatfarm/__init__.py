"""Floating offshore wind farm simulator and distributed economic MPC."""

from floatfarm.farm import (
    FarmConfig,
    MooringSpec,
    TurbineInput,
    TurbineSpec,
    TurbineState,
    make_row_farm,
    neighborhood_cost,
    rotor_overlap_area,
)

__all__ = [
    "FarmConfig",
    "MooringSpec",
    "TurbineInput",
    "TurbineSpec",
    "TurbineState",
    "make_row_farm",
    "neighborhood_cost",
    "rotor_overlap_area",
]

__version__ = "0.1.0"
