"""Coordinate encodings: the periodic sawtooth transform that tiles basis
grids over the volume, and the one-blob encoding that gives the regressor a
localized view of each coordinate."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FREQ_BASE = 2.0
FREQ_STEP = 1.2

# exp(-8): kernel value at the 4-sigma truncation radius of the one-blob bump.
_BLOB_CUTOFF = float(np.exp(-8.0))


def level_frequencies(levels: int) -> tuple[float, ...]:
    """Per-level tiling frequencies 2, 3.2, 4.4, ... (arithmetic step 1.2)."""
    return tuple(FREQ_BASE + FREQ_STEP * (i - 1) for i in range(1, levels + 1))


@dataclass(frozen=True)
class SawtoothConfig:
    levels: int
    frequencies: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.levels < 1:
            raise ValueError("need at least one level")
        freqs = self.frequencies or level_frequencies(self.levels)
        if len(freqs) != self.levels:
            raise ValueError(f"{len(freqs)} frequencies for {self.levels} levels")
        if freqs[0] != FREQ_BASE:
            raise ValueError(f"first frequency must be {FREQ_BASE}")
        if any(b <= a for a, b in zip(freqs, freqs[1:])):
            raise ValueError("frequencies must be strictly increasing")
        object.__setattr__(self, "frequencies", tuple(float(f) for f in freqs))


def sawtooth(point: np.ndarray, level: int, cfg: SawtoothConfig) -> np.ndarray:
    """Periodic fold of a [0,1]^3 point at the given 1-based level.

    Each component maps through (p * f) mod (2 / f), rescaled by f / 2 back
    onto [0, 1); the composed map has period 2 / f^2 in input units.
    """
    if not 1 <= level <= cfg.levels:
        raise ValueError(f"level {level} outside 1..{cfg.levels}")
    f = cfg.frequencies[level - 1]
    p = np.asarray(point, dtype=np.float64)
    out = np.mod(p * f, 2.0 / f) * (f / 2.0)
    # Exact wraps already land on 0; guard the one-ulp rounding case.
    return np.where(out >= 1.0, 0.0, out)


@dataclass(frozen=True)
class OneBlobConfig:
    n_bins: int = 32
    sigma: float = 1.0  # kernel width in bin units

    def __post_init__(self) -> None:
        if self.n_bins < 4:
            raise ValueError(f"need n_bins >= 4, got {self.n_bins}")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    @property
    def features(self) -> int:
        return 3 * self.n_bins


def oneblob(point: np.ndarray, cfg: OneBlobConfig) -> np.ndarray:
    """Per-axis binned Gaussian activations, concatenated; (..., 3 * n_bins).

    Each axis evaluates a Gaussian bump centered on the coordinate at the
    n_bins bin centers, truncated to zero beyond 4 sigma (shifted so the cut
    is continuous), then normalized so the axis block sums to 1.
    """
    p = np.asarray(point, dtype=np.float64)
    single = p.ndim == 1
    pts = p.reshape(-1, 3)
    centers = (np.arange(cfg.n_bins) + 0.5) / cfg.n_bins
    width = cfg.sigma / cfg.n_bins
    z = (pts[:, :, None] - centers[None, None, :]) / width
    act = np.exp(-0.5 * z * z) - _BLOB_CUTOFF
    np.maximum(act, 0.0, out=act)
    act /= act.sum(axis=2, keepdims=True)
    out = act.reshape(-1, 3 * cfg.n_bins)
    return out[0] if single else out
