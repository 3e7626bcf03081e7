"""1-D sagittal terrain profiles with per-segment surface materials."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KINDS = ("flat", "rough", "discretized", "stairs")
MATERIALS = ("wood", "carpet", "tiles", "concrete")


@dataclass
class Terrain:
    """Piecewise-linear height profile sampled on a uniform grid.

    ``heights[i]`` is the ground height at ``x0 + i * dx``; outside the grid the
    edge value is held.  ``materials`` is a sorted list of ``(x_start, name)``
    breakpoints: the material at ``x`` is the last entry with ``x_start <= x``.
    """

    kind: str
    x0: float
    dx: float
    heights: np.ndarray
    materials: list[tuple[float, str]] = field(default_factory=lambda: [(-np.inf, "wood")])
    difficulty_level: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown terrain kind {self.kind!r}")
        if not 0 <= self.difficulty_level <= 4:
            raise ValueError("difficulty_level must be in [0, 4]")
        self.heights = np.asarray(self.heights, dtype=np.float64)
        if self.heights.ndim != 1 or len(self.heights) < 2:
            raise ValueError("heights must be a 1-D array with at least 2 samples")
        if not np.all(np.isfinite(self.heights)):
            raise ValueError("terrain heights must be finite")
        if self.dx <= 0:
            raise ValueError("dx must be positive")
        for _, name in self.materials:
            if name not in MATERIALS:
                raise ValueError(f"unknown material {name!r}")
        self.materials = sorted(self.materials)

    @property
    def x_end(self) -> float:
        return self.x0 + self.dx * (len(self.heights) - 1)

    def height(self, x):
        return height_and_slope(self.heights[None], self.x0, self.dx, np.asarray(x, dtype=float)[None])[0][0]

    def slope(self, x):
        return height_and_slope(self.heights[None], self.x0, self.dx, np.asarray(x, dtype=float)[None])[1][0]

    def material_at(self, x: float) -> str:
        name = self.materials[0][1]
        for start, mat in self.materials:
            if start <= x:
                name = mat
            else:
                break
        return name


def height_and_slope(grid: np.ndarray, x0: float, dx: float, x: np.ndarray):
    """Height and slope of stacked profiles ``grid`` (N, G) at ``x`` (N, ...)."""
    n, g = grid.shape
    u = (x - x0) / dx
    inside = (u >= 0.0) & (u <= g - 1)
    u = np.clip(u, 0.0, g - 1.000001)
    i0 = u.astype(np.int64)
    frac = u - i0
    rows = np.arange(n).reshape((n,) + (1,) * (x.ndim - 1))
    h0 = grid[rows, i0]
    h1 = grid[rows, i0 + 1]
    height = h0 + frac * (h1 - h0)
    slope = np.where(inside, (h1 - h0) / dx, 0.0)
    return height, slope


def _grid(x_min: float, x_max: float, dx: float) -> np.ndarray:
    return np.arange(int(round((x_max - x_min) / dx)) + 1) * dx + x_min


def flat(x_min=-5.0, x_max=40.0, dx=0.01, height=0.0, material="wood") -> Terrain:
    xs = _grid(x_min, x_max, dx)
    return Terrain("flat", x_min, dx, np.full(len(xs), float(height)), [(-np.inf, material)], 0)


def rough(rng: np.random.Generator, amplitude: float, level: int = 1, x_min=-5.0, x_max=40.0,
          dx=0.01, material="wood") -> Terrain:
    """Smoothed random bumps; the first metre around the start stays flat."""
    xs = _grid(x_min, x_max, dx)
    knots = np.arange(x_min, x_max + 0.3, 0.25)
    vals = rng.uniform(-amplitude, amplitude, size=len(knots))
    h = np.interp(xs, knots, vals)
    h[np.abs(xs) < 0.5] = 0.0
    return Terrain("rough", x_min, dx, h, [(-np.inf, material)], level)


def discretized(rng: np.random.Generator, max_step: float, level: int = 2, x_min=-5.0, x_max=40.0,
                dx=0.01, material="wood") -> Terrain:
    """Random-height blocks 0.3-0.6 m long with short ramps between them."""
    xs = _grid(x_min, x_max, dx)
    h = np.zeros(len(xs))
    x = 0.6
    while x < x_max:
        length = rng.uniform(0.3, 0.6)
        h[(xs >= x) & (xs < x + length)] = rng.uniform(-max_step, max_step)
        x += length
    h = _soften(h, dx)
    return Terrain("discretized", x_min, dx, h, [(-np.inf, material)], level)


def stairs(step_height: float, tread: float = 0.35, level: int = 4, x_min=-5.0, x_max=40.0,
           dx=0.01, material="wood", start=0.8) -> Terrain:
    """Ascending staircase starting at ``start``."""
    xs = _grid(x_min, x_max, dx)
    n_steps = np.floor(np.clip(xs - start, 0.0, None) / tread) + (xs >= start)
    h = _soften(step_height * n_steps, dx)
    return Terrain("stairs", x_min, dx, h, [(-np.inf, material)], level)


def _soften(h: np.ndarray, dx: float, width: float = 0.02) -> np.ndarray:
    # vertical risers become steep ramps so the contact normal stays defined
    k = max(1, int(round(width / dx)))
    kernel = np.ones(k) / k
    padded = np.concatenate([np.full(k, h[0]), h, np.full(k, h[-1])])
    return np.convolve(padded, kernel, mode="same")[k:-k]


def route(segments: list[tuple[str, float]], dx=0.01, lead_in=2.0, tail=5.0) -> Terrain:
    """Flat mixed-material route; ``segments`` is a list of (material, length_m)."""
    if not segments:
        raise ValueError("route needs at least one segment")
    total = 0.0
    mats = []
    for name, length in segments:
        if length <= 0:
            raise ValueError("route segment lengths must be positive")
        mats.append((total, name))
        total += length
    mats[0] = (-np.inf, mats[0][1])
    xs = _grid(-lead_in, total + tail, dx)
    return Terrain("flat", -lead_in, dx, np.zeros(len(xs)), mats, 0)


def for_level(level: int, rng: np.random.Generator, x_max: float = 40.0) -> Terrain:
    """Curriculum terrain generator: flat at level 0, mildly harder above."""
    level = int(np.clip(level, 0, 4))
    t = _pick(level, rng, x_max)
    t.difficulty_level = level
    return t


def _pick(level, rng, x_max):
    if level == 0:
        return flat(x_max=x_max)
    pick = rng.uniform()
    if level == 1:
        return rough(rng, 0.01, 1, x_max=x_max) if pick < 0.5 else flat(x_max=x_max)
    if level == 2:
        return rough(rng, 0.02, 2, x_max=x_max) if pick < 0.5 else discretized(rng, 0.01, 2, x_max=x_max)
    if level == 3:
        return discretized(rng, 0.02, 3, x_max=x_max) if pick < 0.5 else rough(rng, 0.03, 3, x_max=x_max)
    if pick < 0.4:
        return stairs(0.03, level=4, x_max=x_max)
    return discretized(rng, 0.03, 4, x_max=x_max) if pick < 0.7 else rough(rng, 0.04, 4, x_max=x_max)


def stack(terrains: list[Terrain]) -> tuple[np.ndarray, float, float]:
    """Stack terrains sharing one grid into an (N, G) height array."""
    t0 = terrains[0]
    for t in terrains[1:]:
        if t.x0 != t0.x0 or t.dx != t0.dx or len(t.heights) != len(t0.heights):
            raise ValueError("terrains in a batch must share the same grid")
    return np.stack([t.heights for t in terrains]), t0.x0, t0.dx
