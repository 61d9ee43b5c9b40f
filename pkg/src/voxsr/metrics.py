"""Volume quality metrics (PSNR, windowed 3D SSIM) and the tricubic
interpolation baseline."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .volume_io import Volume3D, upsampled_geometry

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass
class MetricsReport:
    psnr: float
    ssim: float
    dims: tuple[int, int, int]
    method: str
    config_hash: str = ""
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "psnr": self.psnr,
            "ssim": self.ssim,
            "dims": list(self.dims),
            "method": self.method,
            "config_hash": self.config_hash,
            "seconds": self.seconds,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _check_pair(a: Volume3D, b: Volume3D) -> None:
    if a.dims != b.dims:
        raise ValueError(f"volume dims differ: {a.dims} vs {b.dims}")


def psnr(a: Volume3D, b: Volume3D) -> float:
    """10 log10(1 / MSE) on unit-range intensities, capped at 100 dB."""
    _check_pair(a, b)
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse <= 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def _ssim_window() -> np.ndarray:
    radius = SSIM_WINDOW // 2
    r = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-0.5 * (r / SSIM_SIGMA) ** 2)
    return taps / taps.sum()


def _windowed(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    out = x
    for axis in range(3):
        out = correlate1d(out, taps, axis=axis, mode="constant", cval=0.0)
    return out


def ssim3d(a: Volume3D, b: Volume3D) -> float:
    """Mean local SSIM with a 3D Gaussian window (11 taps, sigma 1.5).

    Windows overhanging the border are renormalized by the in-volume window
    mass, so constants keep exact local means everywhere.
    """
    _check_pair(a, b)
    if min(a.dims) < SSIM_WINDOW:
        raise ValueError(f"every dim must be >= {SSIM_WINDOW}, got {a.dims}")
    x = a.data.astype(np.float64)
    y = b.data.astype(np.float64)
    taps = _ssim_window()
    mass = _windowed(np.ones_like(x), taps)

    mx = _windowed(x, taps) / mass
    my = _windowed(y, taps) / mass
    exx = _windowed(x * x, taps) / mass
    eyy = _windowed(y * y, taps) / mass
    exy = _windowed(x * y, taps) / mass
    vx = exx - mx * mx
    vy = eyy - my * my
    cov = exy - mx * my

    num = (2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2)
    return float(np.mean(num / den))


def _catmull_rom_weights(t: np.ndarray) -> np.ndarray:
    """Weights for samples at offsets (-1, 0, 1, 2); rows sum to 1."""
    t2 = t * t
    t3 = t2 * t
    return np.stack(
        [
            0.5 * (-t3 + 2.0 * t2 - t),
            0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
            0.5 * (-3.0 * t3 + 4.0 * t2 + t),
            0.5 * (t3 - t2),
        ],
        axis=1,
    )


def _upsample_axis(data: np.ndarray, k: int, axis: int) -> np.ndarray:
    n = data.shape[axis]
    out_n = n * k
    # Fine voxel h sits at coarse coordinate (h - (k-1)/2) / k: the same
    # block-center convention the downsampler uses.
    u = (np.arange(out_n, dtype=np.float64) - (k - 1) / 2.0) / k
    base = np.floor(u).astype(np.int64)
    t = u - base
    weights = _catmull_rom_weights(t)
    moved = np.moveaxis(data, axis, 0)
    out = np.zeros((out_n,) + moved.shape[1:], dtype=np.float64)
    for j, offset in enumerate((-1, 0, 1, 2)):
        idx = np.clip(base + offset, 0, n - 1)
        out += weights[:, j].reshape((-1,) + (1,) * (moved.ndim - 1)) * moved[idx]
    return np.moveaxis(out, 0, axis)


def tricubic_upsample(lr: Volume3D, k: int) -> Volume3D:
    """Catmull-Rom cubic upsampling by an integer factor per axis.

    Edge cells reuse clamped indices; the result is clamped to [0, 1]. k=1
    reproduces the input exactly (the kernel interpolates).
    """
    k = int(k)
    if k < 1:
        raise ValueError(f"factor must be >= 1, got {k}")
    if min(lr.dims) < 4:
        raise ValueError(f"tricubic needs >= 4 voxels per axis, got {lr.dims}")
    data = lr.data.astype(np.float64)
    for axis in range(3):
        data = _upsample_axis(data, k, axis)
    np.clip(data, 0.0, 1.0, out=data)
    dims, affine = upsampled_geometry(lr, k)
    assert data.shape == dims
    return Volume3D(data=data, affine=affine, intensity_range=lr.intensity_range)
