"""Coordinate plumbing: scanner-space voxel centers and the shared normalized
[0,1]^3 frame in which the field is trained and queried.

Training coordinates (from the low-res volume) and query coordinates (from the
requested high-res grid) must be normalized against the same bounding box,
otherwise queries would probe the field out of distribution. Normalization is
per-axis min-max; traversal order is x-fastest throughout so coordinates,
intensities, and predictions align by flat index.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume_io import Volume3D


@dataclass(frozen=True)
class Box:
    """Axis-aligned scanner-space box."""

    lo: np.ndarray
    hi: np.ndarray

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.hi, dtype=np.float64) - np.asarray(self.lo, dtype=np.float64)


@dataclass
class CoordSet:
    """Normalized coordinates plus the frame they were normalized in."""

    points: np.ndarray
    bounds: Box
    source_dims: tuple[int, int, int] | None = None
    clamped_fraction: float = 0.0


def voxel_index_grid(dims: tuple[int, int, int]) -> np.ndarray:
    """(N, 3) integer voxel indices in x-fastest order."""
    h, w, d = dims
    ii, jj, kk = np.meshgrid(np.arange(h), np.arange(w), np.arange(d), indexing="ij")
    return np.stack(
        [ii.ravel(order="F"), jj.ravel(order="F"), kk.ravel(order="F")], axis=1
    ).astype(np.float64)


def voxel_coords(volume: Volume3D) -> np.ndarray:
    """Scanner-space voxel centers, (N, 3), x-fastest, aligned with volume.flat()."""
    idx = voxel_index_grid(volume.dims)
    return idx @ volume.affine[:3, :3].T + volume.affine[:3, 3]


def coords_for(dims: tuple[int, int, int], affine: np.ndarray) -> np.ndarray:
    """Scanner-space centers of an arbitrary voxel grid (same ordering rules)."""
    affine = np.asarray(affine, dtype=np.float64).reshape(4, 4)
    idx = voxel_index_grid(dims)
    return idx @ affine[:3, :3].T + affine[:3, 3]


def normalize_coords(
    points: np.ndarray,
    bounds: Box,
    source_dims: tuple[int, int, int] | None = None,
) -> CoordSet:
    """Map scanner-space points into [0,1]^3 via per-axis min-max, clamping.

    The fraction of points that needed clamping is recorded; a large fraction
    means the bounds do not cover the queried region.
    """
    extent = bounds.extent
    if np.any(extent <= 0):
        raise ValueError(f"degenerate bounds: extent {extent} must be positive per axis")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    unit = (pts - np.asarray(bounds.lo, dtype=np.float64)) / extent
    outside = np.any((unit < 0.0) | (unit > 1.0), axis=1)
    clamped_fraction = float(outside.mean()) if len(unit) else 0.0
    np.clip(unit, 0.0, 1.0, out=unit)
    return CoordSet(
        points=unit,
        bounds=bounds,
        source_dims=source_dims,
        clamped_fraction=clamped_fraction,
    )


def shared_bounds(lr: Volume3D, margin: float = 0.0) -> Box:
    """Bounding box of the LR voxel centers, padded by margin * extent per side."""
    pts = voxel_coords(lr)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    pad = margin * (hi - lo)
    return Box(lo=lo - pad, hi=hi + pad)


def default_margin(lr: Volume3D) -> float:
    """Margin fraction that pads the LR center box by half an LR voxel spacing.

    Half a coarse spacing covers the full extent of the source blocks, so the
    voxel centers of any upsampled grid over the same region land strictly
    inside the box for every integer factor.
    """
    smallest = min(lr.dims)
    if smallest < 2:
        raise ValueError("need at least 2 voxels per axis to derive a margin")
    return 0.5 / (smallest - 1)
