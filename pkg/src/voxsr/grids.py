"""Dense scalar lattice grids over [0,1]^3 with trilinear reads and
gradient scatter-adds, plus the geometric resolution schedule for the
multi-scale basis family.

A grid of resolution R stores R^3 node values at positions m/(R-1); values are
float32 (the checkpoint wire type) while all interpolation arithmetic and the
gradient accumulators are float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

INIT_SCALE = 0.1

# Corner offsets of a cell, in (dx, dy, dz) binary order.
_CORNERS = np.array(
    [[dx, dy, dz] for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)], dtype=np.int64
)


@dataclass
class LevelGrid:
    """One dense scalar grid: trainable node values plus a gradient buffer."""

    resolution: int
    values: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.resolution < 2:
            raise ValueError(f"grid resolution must be >= 2, got {self.resolution}")
        self.values = np.asarray(self.values, dtype=np.float32)
        expected = (self.resolution,) * 3
        if self.values.shape != expected:
            raise ValueError(f"values shape {self.values.shape} != {expected}")
        if self.grad is None:
            self.grad = np.zeros(expected, dtype=np.float64)
        elif self.grad.shape != self.values.shape:
            raise ValueError("grad and values must share a shape")

    @classmethod
    def create(cls, resolution: int, rng: np.random.Generator, scale: float | None = None) -> "LevelGrid":
        if scale is None:
            scale = INIT_SCALE
        values = rng.uniform(-scale, scale, size=(resolution,) * 3)
        return cls(resolution=resolution, values=values.astype(np.float32))

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


@dataclass
class GridPyramid:
    """Ordered stack of K grids, either the constant-resolution coefficient
    family or the multi-resolution basis family."""

    kind: str
    levels: list[LevelGrid]

    def __post_init__(self) -> None:
        if self.kind not in ("coefficient", "basis"):
            raise ValueError(f"unknown pyramid kind {self.kind!r}")
        res = [g.resolution for g in self.levels]
        if self.kind == "coefficient" and len(set(res)) > 1:
            raise ValueError(f"coefficient grids must share one resolution, got {res}")
        if self.kind == "basis" and any(b < a for a, b in zip(res, res[1:])):
            raise ValueError(f"basis resolutions must be non-decreasing, got {res}")

    def __len__(self) -> int:
        return len(self.levels)


def cell_weights(resolution: int, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flat node indices (N, 8) and trilinear weights (N, 8) for each point.

    Points must lie in [0,1]^3; the weights of each row sum to 1.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if np.any(pts < 0.0) or np.any(pts > 1.0):
        raise ValueError("points must lie inside the unit cube")
    u = pts * (resolution - 1)
    base = np.floor(u).astype(np.int64)
    np.clip(base, 0, resolution - 2, out=base)
    frac = u - base  # in [0, 1]

    corner_idx = base[:, None, :] + _CORNERS[None, :, :]  # (N, 8, 3)
    flat = (corner_idx[..., 0] * resolution + corner_idx[..., 1]) * resolution + corner_idx[..., 2]

    one = 1.0 - frac
    wx = np.where(_CORNERS[None, :, 0] == 1, frac[:, None, 0], one[:, None, 0])
    wy = np.where(_CORNERS[None, :, 1] == 1, frac[:, None, 1], one[:, None, 1])
    wz = np.where(_CORNERS[None, :, 2] == 1, frac[:, None, 2], one[:, None, 2])
    return flat, wx * wy * wz


def trilerp(grid: LevelGrid, point: np.ndarray) -> float | np.ndarray:
    """Trilinear read at one point (3,) or a batch (N, 3)."""
    pts = np.asarray(point, dtype=np.float64)
    single = pts.ndim == 1
    idx, w = cell_weights(grid.resolution, pts)
    corners = grid.values.ravel()[idx].astype(np.float64)
    out = np.sum(corners * w, axis=1)
    return float(out[0]) if single else out


def trilerp_backward(grid: LevelGrid, point: np.ndarray, upstream: float | np.ndarray) -> None:
    """Scatter-add ``upstream`` times each corner weight into ``grid.grad``."""
    pts = np.asarray(point, dtype=np.float64)
    idx, w = cell_weights(grid.resolution, pts)
    up = np.asarray(upstream, dtype=np.float64).reshape(-1, 1)
    np.add.at(grid.grad.reshape(-1), idx, w * up)


def resolution_schedule(r_min: int, r_max: int, k: int) -> list[int]:
    """Geometric ladder of K resolutions from r_min to r_max (both attained).

    Level i gets floor(r_min * g^(i-1)) with g = exp((ln r_max - ln r_min) / (K-1));
    the endpoints are pinned so float rounding can never shift them.
    """
    if not 2 <= r_min <= r_max:
        raise ValueError(f"need 2 <= r_min <= r_max, got {r_min}, {r_max}")
    if k < 1:
        raise ValueError(f"need at least one level, got {k}")
    if k == 1:
        if r_min != r_max:
            raise ValueError("a single level requires r_min == r_max")
        return [r_min]
    growth = np.exp((np.log(r_max) - np.log(r_min)) / (k - 1))
    schedule = [int(np.floor(r_min * growth ** (i - 1))) for i in range(1, k + 1)]
    schedule[0] = r_min
    schedule[-1] = r_max
    return schedule
