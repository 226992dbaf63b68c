"""Randomly perturbed free-stream wind: uniform knots every ten minutes,
natural cubic spline in between."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

log = logging.getLogger(__name__)

KNOT_INTERVAL = 600.0
SAMPLE_INTERVAL = 0.1


@dataclass(frozen=True)
class WindConfig:
    base_velocity: tuple[float, float] = (8.0, 0.0)
    sigma: float = 0.0
    duration: float = 3600.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.sigma <= 1.0:
            raise ValueError("sigma must lie in [0, 1]")
        if self.duration <= 0:
            raise ValueError("duration must be positive")


class WindSeries:
    def __init__(self, knot_times: np.ndarray, knot_velocities: np.ndarray, duration: float):
        self.knot_times = knot_times
        self.knot_velocities = knot_velocities
        self.duration = float(duration)
        self._spline = CubicSpline(knot_times, knot_velocities, axis=0, bc_type="natural")
        n = int(round(self.duration / SAMPLE_INTERVAL))
        self.times = np.arange(n + 1) * SAMPLE_INTERVAL
        self.samples = self._spline(self.times)
        # exact knot values on the grid
        for tk, vk in zip(knot_times, knot_velocities):
            k = int(round(tk / SAMPLE_INTERVAL))
            if k <= n:
                self.samples[k] = vk

    def __call__(self, t: float) -> np.ndarray:
        return sample_wind(self, t)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_s", "vx_ms", "vy_ms"])
            for t, (vx, vy) in zip(self.times, self.samples):
                w.writerow([f"{t:.1f}", repr(float(vx)), repr(float(vy))])


def generate_wind_series(cfg: WindConfig) -> WindSeries:
    base = np.asarray(cfg.base_velocity, dtype=float)
    n_knots = max(int(math.ceil(cfg.duration / KNOT_INTERVAL)) + 1, 2)
    times = np.arange(n_knots) * KNOT_INTERVAL
    bound = cfg.sigma * float(np.linalg.norm(base))
    rng = np.random.default_rng(cfg.seed)
    knots = base + rng.uniform(-bound, bound, size=(n_knots, 2))
    return WindSeries(times, knots, cfg.duration)


def sample_wind(series: WindSeries, t: float) -> np.ndarray:
    """Free-stream velocity at ``t``; grid points are returned exactly, other
    times through the spline. Out-of-range times are clamped with a warning."""
    if t < 0.0 or t > series.duration:
        log.warning("wind sample at t=%.3f s outside [0, %.1f]; clamping", t, series.duration)
        t = min(max(t, 0.0), series.duration)
    k = t / SAMPLE_INTERVAL
    kr = int(round(k))
    if abs(k - kr) < 1e-9:
        return series.samples[kr].copy()
    return np.asarray(series._spline(t), dtype=float)
