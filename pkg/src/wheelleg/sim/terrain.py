"""Heightfield terrain: curriculum-parameterized 1D height functions.

Kinds: flat, stairs, slope, discretized, rough, pit. Difficulty scales
with level l out of L (the formulas use l/L). Heights are sampled on a
uniform grid and queried by piecewise-linear interpolation, clamped at
the boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TERRAIN_KINDS = ("flat", "stairs", "slope", "discretized", "rough", "pit")

# stairs/slope begin after a flat run-up so the spawn region stays level
FEATURE_START_X = 1.0
STAIR_WIDTH = 0.3
PIT_HALF_WIDTH = 2.0   # 4 m wide depression, centered at x = 0
BUMP_SPACING = 1.5     # one discretized bump per 1.5 m


@dataclass
class Heightfield:
    kind: str
    level: int
    heights: np.ndarray
    dx: float
    x0: float

    def __post_init__(self):
        if self.kind not in TERRAIN_KINDS:
            raise ValueError(f"unknown terrain kind: {self.kind}")
        self.heights = np.asarray(self.heights, dtype=np.float64)
        if not np.all(np.isfinite(self.heights)):
            raise ValueError("heightfield contains non-finite samples")

    @property
    def x_max(self) -> float:
        return self.x0 + (len(self.heights) - 1) * self.dx

    def polyline(self):
        xs = self.x0 + self.dx * np.arange(len(self.heights))
        return np.stack([xs, self.heights], axis=1)


def query_height(terrain: Heightfield, x) -> np.ndarray | float:
    """Piecewise-linear interpolated height; x clamps to the sampled range."""
    xs = np.asarray(x, dtype=np.float64)
    u = (xs - terrain.x0) / terrain.dx
    u = np.clip(u, 0.0, len(terrain.heights) - 1)
    i0 = np.floor(u).astype(np.int64)
    i0 = np.minimum(i0, len(terrain.heights) - 2)
    frac = u - i0
    h = terrain.heights[i0] * (1.0 - frac) + terrain.heights[i0 + 1] * frac
    return float(h) if np.isscalar(x) else h


def sample_terrain(
    kind: str,
    level: int,
    num_levels: int,
    seed: int,
    half_extent: float = 10.0,
    dx: float = 0.05,
) -> Heightfield:
    if kind not in TERRAIN_KINDS:
        raise ValueError(f"unknown terrain kind: {kind}")
    if not (1 <= level <= num_levels):
        raise ValueError(f"level {level} outside [1, {num_levels}]")
    rng = np.random.default_rng(seed)
    frac = level / num_levels
    n = int(round(2 * half_extent / dx)) + 1
    xs = -half_extent + dx * np.arange(n)
    h = np.zeros(n)

    if kind == "flat":
        pass
    elif kind == "stairs":
        step_h = 0.05 + 0.18 * frac
        steps = np.floor((xs - FEATURE_START_X) / STAIR_WIDTH) + 1
        h = np.where(xs >= FEATURE_START_X, steps * step_h, 0.0)
    elif kind == "slope":
        grade = 0.5 * frac
        h = np.where(xs >= FEATURE_START_X, grade * (xs - FEATURE_START_X), 0.0)
    elif kind == "discretized":
        bump_h = 0.05 + 0.17 * frac
        x = -half_extent + rng.uniform(0.0, BUMP_SPACING)
        while x < half_extent:
            width = rng.uniform(1.0, 2.0)
            lo, hi = x, min(x + width, half_extent)
            # keep a clear spawn region around x = 0
            if hi < -0.8 or lo > 0.8:
                h[(xs >= lo) & (xs <= hi)] = bump_h
            x += width + BUMP_SPACING
    elif kind == "rough":
        # resampled per grid cell of 0.2 m, interpolated by the field grid
        cell = 0.2
        n_cells = int(round(2 * half_extent / cell)) + 1
        cell_h = rng.uniform(0.04, 0.12, size=n_cells)
        cell_x = -half_extent + cell * np.arange(n_cells)
        h = np.interp(xs, cell_x, cell_h)
        # flatten the spawn region
        mask = np.abs(xs) < 0.8
        h[mask] = h[~mask].min()
        h -= h.min()
    elif kind == "pit":
        depth = 0.05 + frac
        inside = np.abs(xs) <= PIT_HALF_WIDTH
        h = np.where(inside, -depth, 0.0)

    return Heightfield(kind=kind, level=level, heights=h, dx=dx, x0=-half_extent)


def pit_depth(terrain: Heightfield) -> float:
    return float(-terrain.heights.min())


def mirror_terrain(terrain: Heightfield) -> Heightfield:
    """Reflect the heightfield about the vertical axis x = 0."""
    return Heightfield(
        kind=terrain.kind,
        level=terrain.level,
        heights=terrain.heights[::-1].copy(),
        dx=terrain.dx,
        x0=-terrain.x_max,
    )
