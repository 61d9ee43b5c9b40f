"""Optimization loop: Adam over two parameter groups (grids vs MLP) against
the MSE objective on the low-res voxels, plus fixed-parameter inference onto
an arbitrary target grid."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .coords import coords_for, default_margin, normalize_coords, shared_bounds, voxel_coords
from .field import FactorGridField, FieldConfig, NormInfo
from .volume_io import Volume3D

VARIANTS = ("full", "no-basis", "no-coeff", "no-periodic", "no-oneblob")


@dataclass
class TrainConfig:
    """All knobs of a training run; defaults are the standard recipe."""

    epochs: int = 50
    batch_size: int = 1000
    lr_grids: float = 2e-2
    lr_mlp: float = 1e-3
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    levels: int = 6
    coeff_resolution: int = 32
    r_min: int = 32
    r_max: int = 128
    n_bins: int = 32
    sigma_bins: float = 1.0
    mlp_width: int = 64
    margin: float | None = None
    variant: str = "full"

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if min(self.lr_grids, self.lr_mlp) < 0 or self.weight_decay < 0:
            raise ValueError("learning rates and weight decay must be non-negative")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1 and self.eps > 0):
            raise ValueError("bad Adam constants")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.margin is not None and self.margin < 0:
            raise ValueError("margin must be non-negative")

    def field_config(self) -> FieldConfig:
        return FieldConfig(
            levels=self.levels,
            coeff_resolution=self.coeff_resolution,
            r_min=self.r_min,
            r_max=self.r_max,
            n_bins=self.n_bins,
            sigma_bins=self.sigma_bins,
            mlp_width=self.mlp_width,
            use_coeff=self.variant != "no-coeff",
            use_basis=self.variant != "no-basis",
            use_periodic=self.variant != "no-periodic",
            use_oneblob=self.variant != "no-oneblob",
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(payload) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        cfg = cls(**payload)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path: str | Path) -> "TrainConfig":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                payload = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: config is not valid JSON: {exc}") from exc
        if not isinstance(payload, dict):
            raise ValueError(f"{path}: config must be a JSON object")
        return cls.from_dict(payload)


class AdamState:
    """First/second moment accumulators and the shared step counter.

    Moments take each parameter's dtype, so float32 training parameters get
    float32 moments (half the memory traffic of the update loop).
    """

    def __init__(self, params: list[np.ndarray], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros(p.shape, dtype=p.dtype) for p in params]
        self.v = [np.zeros(p.shape, dtype=p.dtype) for p in params]
        self.t = 0


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if len(pred) != len(target) or len(pred) == 0:
        raise ValueError(f"batch lengths must match and be >= 1, got {len(pred)} vs {len(target)}")
    diff = pred - target
    return float(np.mean(diff * diff))


def mse_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """d(mse)/d(pred_j) = 2 (pred_j - target_j) / n."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if len(pred) != len(target) or len(pred) == 0:
        raise ValueError("batch lengths must match and be >= 1")
    return 2.0 * (pred - target) / len(pred)


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
) -> None:
    """Bias-corrected Adam update, with decoupled decay applied first."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads, and state must have matching lengths")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"param shape {p.shape} does not match grad shape {g.shape}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if lr and weight_decay:
            p *= p.dtype.type(1.0 - lr * weight_decay)
        g = g.astype(p.dtype, copy=False)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        denom = np.sqrt(v * (1.0 / bc2))
        denom += state.eps
        step = m * (lr / bc1)
        step /= denom
        p -= step


@dataclass
class TrainResult:
    model: FactorGridField
    epoch_losses: list[float]
    seconds: float
    config: TrainConfig


def epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    """Shuffled index batches covering 0..n-1 exactly once (last one may be short)."""
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def train(lr_volume: Volume3D, cfg: TrainConfig) -> TrainResult:
    """Fit a field to the voxels of a normalized low-res volume.

    One epoch is one shuffled pass over every voxel coordinate. The input
    volume is never mutated.
    """
    cfg.validate()
    targets = lr_volume.flat().astype(np.float64)
    if targets.min() < 0.0 or targets.max() > 1.0:
        raise ValueError("train expects intensities in [0, 1]; run normalize() first")

    started = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    margin = cfg.margin if cfg.margin is not None else default_margin(lr_volume)
    bounds = shared_bounds(lr_volume, margin)
    coord_set = normalize_coords(voxel_coords(lr_volume), bounds, source_dims=lr_volume.dims)
    model = FactorGridField.create(
        cfg.field_config(),
        rng,
        norm=NormInfo(bounds=bounds, intensity_range=lr_volume.intensity_range),
        seed=cfg.seed,
        lr_dims=lr_volume.dims,
        lr_affine=lr_volume.affine,
    )

    grid_group = model.grid_parameters()
    mlp_group = model.mlp_parameters()
    grid_state = AdamState([p for _, p, _ in grid_group], cfg.beta1, cfg.beta2, cfg.eps)
    mlp_state = AdamState([p for _, p, _ in mlp_group], cfg.beta1, cfg.beta2, cfg.eps)

    n = len(targets)
    epoch_losses: list[float] = []
    for _ in range(cfg.epochs):
        squared_error = 0.0
        for idx in epoch_batches(n, cfg.batch_size, rng):
            pts = coord_set.points[idx]
            tgt = targets[idx]
            pred = model.forward_train(pts)
            squared_error += mse_loss(pred, tgt) * len(idx)
            model.zero_grads()
            model.backward(mse_grad(pred, tgt))
            if grid_group:
                adam_step([p for _, p, _ in grid_group], [g for _, _, g in grid_group],
                          grid_state, cfg.lr_grids, cfg.weight_decay)
            adam_step([p for _, p, _ in mlp_group], [g for _, _, g in mlp_group],
                      mlp_state, cfg.lr_mlp, cfg.weight_decay)
        epoch_losses.append(squared_error / n)

    return TrainResult(
        model=model,
        epoch_losses=epoch_losses,
        seconds=time.perf_counter() - started,
        config=cfg,
    )


def infer_volume(
    model: FactorGridField,
    target_dims: tuple[int, int, int],
    target_affine: np.ndarray,
    batch_size: int = 8192,
) -> Volume3D:
    """Evaluate the frozen field at every voxel of the requested grid.

    Coordinates are normalized with the bounds stored at training time and
    predictions are clamped to [0, 1] for volume assembly.
    """
    if model.norm is None:
        raise ValueError("model carries no coordinate bounds; train it or load a full checkpoint")
    pts = coords_for(target_dims, target_affine)
    coord_set = normalize_coords(pts, model.norm.bounds, source_dims=tuple(target_dims))
    preds = np.empty(len(pts), dtype=np.float64)
    for start in range(0, len(pts), batch_size):
        chunk = coord_set.points[start : start + batch_size]
        preds[start : start + len(chunk)] = model.predict(chunk)
    np.clip(preds, 0.0, 1.0, out=preds)
    data = preds.reshape(target_dims, order="F")
    return Volume3D(data=data, affine=target_affine, intensity_range=model.norm.intensity_range)
