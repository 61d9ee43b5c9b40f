"""Deterministic synthetic volumes used in place of clinical scans.

Three families:

* ``ellipsoids`` — nested soft-edged ellipsoids, a crude head-phantom look;
* ``smooth-blobs`` — a seeded sum of Gaussian bumps, min-max scaled to [0,1];
* ``checker-smooth`` — 0.5 + 0.5 sin(2 pi a x) sin(2 pi b y) sin(2 pi c z),
  which has an exact analytic value at any continuous coordinate and so
  supports true continuous-resolution accuracy checks.

Voxel (i, j, k) of a size-S phantom samples the normalized position
((i + .5)/S, (j + .5)/S, (k + .5)/S); volumes carry an identity affine.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .volume_io import Volume3D

KINDS = ("ellipsoids", "smooth-blobs", "checker-smooth")

# center (3,), radii (3,), additive value
_ELLIPSOID_PRESET = [
    ((0.50, 0.50, 0.50), (0.42, 0.36, 0.40), 0.55),
    ((0.50, 0.50, 0.50), (0.36, 0.30, 0.34), -0.25),
    ((0.36, 0.42, 0.52), (0.10, 0.13, 0.16), 0.35),
    ((0.64, 0.42, 0.52), (0.10, 0.13, 0.16), 0.30),
    ((0.50, 0.64, 0.42), (0.14, 0.08, 0.10), 0.45),
    ((0.50, 0.38, 0.66), (0.05, 0.05, 0.07), 0.60),
]


@dataclass
class PhantomSpec:
    kind: str
    size: int
    seed: int = 0
    params: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.size < 8:
            raise ValueError(f"size must be >= 8, got {self.size}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "size": self.size, "seed": self.seed, "params": self.params}

    @classmethod
    def from_dict(cls, payload: dict) -> "PhantomSpec":
        spec = cls(
            kind=payload.get("kind", ""),
            size=int(payload.get("size", 0)),
            seed=int(payload.get("seed", 0)),
            params=dict(payload.get("params", {})),
        )
        spec.validate()
        return spec

    @classmethod
    def from_json(cls, path: str | Path) -> "PhantomSpec":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _unit_grid(size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    axis = (np.arange(size, dtype=np.float64) + 0.5) / size
    return np.meshgrid(axis, axis, axis, indexing="ij")


def checker_value(points: np.ndarray, a: float, b: float, c: float) -> np.ndarray:
    """Analytic checker-smooth intensity at continuous [0,1]^3 coordinates."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return 0.5 + 0.5 * (
        np.sin(2 * np.pi * a * p[:, 0])
        * np.sin(2 * np.pi * b * p[:, 1])
        * np.sin(2 * np.pi * c * p[:, 2])
    )


def _checker(spec: PhantomSpec) -> np.ndarray:
    a = float(spec.params.get("a", 2.0))
    b = float(spec.params.get("b", 2.0))
    c = float(spec.params.get("c", 2.0))
    x, y, z = _unit_grid(spec.size)
    return 0.5 + 0.5 * np.sin(2 * np.pi * a * x) * np.sin(2 * np.pi * b * y) * np.sin(2 * np.pi * c * z)


def _smooth_blobs(spec: PhantomSpec) -> np.ndarray:
    n_blobs = int(spec.params.get("n_blobs", 12))
    width_lo, width_hi = spec.params.get("width_range", (0.05, 0.16))
    rng = np.random.default_rng(spec.seed)
    x, y, z = _unit_grid(spec.size)
    acc = np.zeros_like(x)
    for _ in range(n_blobs):
        center = rng.uniform(0.15, 0.85, size=3)
        width = rng.uniform(width_lo, width_hi)
        amp = rng.uniform(0.35, 1.0) * rng.choice((-1.0, 1.0))
        q = ((x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2) / (2 * width * width)
        acc += amp * np.exp(-q)
    lo, hi = acc.min(), acc.max()
    if hi > lo:
        acc = (acc - lo) / (hi - lo)
    else:
        acc = np.full_like(acc, 0.5)
    return acc


def _ellipsoids(spec: PhantomSpec) -> np.ndarray:
    smoothness = float(spec.params.get("smoothness", 0.08))
    shapes = spec.params.get("shapes", _ELLIPSOID_PRESET)
    x, y, z = _unit_grid(spec.size)
    acc = np.zeros_like(x)
    for center, radii, value in shapes:
        q = (
            ((x - center[0]) / radii[0]) ** 2
            + ((y - center[1]) / radii[1]) ** 2
            + ((z - center[2]) / radii[2]) ** 2
        )
        # Soft edge: ~1 inside the ellipsoid, ~0 outside, smooth over the shell.
        acc += value / (1.0 + np.exp((q - 1.0) / smoothness))
    return np.clip(acc, 0.0, 1.0)


def generate(spec: PhantomSpec) -> Volume3D:
    """Render the spec into a volume with identity affine; intensities in [0,1]."""
    spec.validate()
    if spec.kind == "checker-smooth":
        data = _checker(spec)
    elif spec.kind == "smooth-blobs":
        data = _smooth_blobs(spec)
    else:
        data = _ellipsoids(spec)
    data = np.clip(data, 0.0, 1.0)
    return Volume3D(data=data, affine=np.eye(4), intensity_range=(0.0, 1.0))
