"""The trainable volumetric field.

Per level, a constant-resolution coefficient grid is read at the raw
normalized coordinate and a multi-resolution basis grid is read at the
sawtooth-folded coordinate; the per-level products, concatenated with the
one-blob features, feed a small ReLU MLP that outputs intensity. Forward and
backward passes are written out by hand; gradients accumulate into float64
buffers while parameters stay float32 (the checkpoint wire type).
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .coords import Box
from .encoders import OneBlobConfig, SawtoothConfig, oneblob, sawtooth
from .errors import CheckpointError
from .grids import GridPyramid, LevelGrid, cell_weights, resolution_schedule
from .volume_io import Volume3D

CHECKPOINT_MAGIC = b"VXSR"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class FieldConfig:
    levels: int = 6
    coeff_resolution: int = 32
    r_min: int = 32
    r_max: int = 128
    n_bins: int = 32
    sigma_bins: float = 1.0
    mlp_width: int = 64
    use_coeff: bool = True
    use_basis: bool = True
    use_periodic: bool = True
    use_oneblob: bool = True

    @property
    def mlp_in_features(self) -> int:
        return self.levels + (3 * self.n_bins if self.use_oneblob else 0)

    def basis_resolutions(self) -> list[int]:
        return resolution_schedule(self.r_min, self.r_max, self.levels)


@dataclass
class NormInfo:
    """Everything needed to reproduce inference: the coordinate box the model
    was trained in and the raw intensity range of the source volume."""

    bounds: Box
    intensity_range: tuple[float, float] = (0.0, 1.0)


class MLPParams:
    """Two ReLU hidden layers of equal width, linear scalar output."""

    def __init__(self, in_features: int, width: int, rng: np.random.Generator):
        def he_uniform(fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
            bound = np.sqrt(6.0 / fan_in)
            return rng.uniform(-bound, bound, size=shape).astype(np.float32)

        self.in_features = in_features
        self.width = width
        self.w1 = he_uniform(in_features, (in_features, width))
        self.b1 = np.zeros(width, dtype=np.float32)
        self.w2 = he_uniform(width, (width, width))
        self.b2 = np.zeros(width, dtype=np.float32)
        self.w3 = he_uniform(width, (width, 1))
        self.b3 = np.zeros(1, dtype=np.float32)
        self.grads = {name: np.zeros_like(arr, dtype=np.float64) for name, arr in self.named()}

    def named(self) -> list[tuple[str, np.ndarray]]:
        return [
            ("w1", self.w1),
            ("b1", self.b1),
            ("w2", self.w2),
            ("b2", self.b2),
            ("w3", self.w3),
            ("b3", self.b3),
        ]

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)


class _Cache:
    """Activations saved by a training forward pass for the matching backward."""

    __slots__ = (
        "inputs", "mask1", "a1", "mask2", "a2",
        "coeff_vals", "basis_vals", "coeff_gather", "basis_gathers",
    )

    def __init__(self, **kw):
        for k, v in kw.items():
            setattr(self, k, v)


class FactorGridField:
    """K coefficient grids x K basis grids -> one-blob-augmented MLP regressor."""

    def __init__(
        self,
        cfg: FieldConfig,
        coeff: GridPyramid | None,
        basis: GridPyramid | None,
        mlp: MLPParams,
        norm: NormInfo | None = None,
        seed: int | None = None,
        lr_dims: tuple[int, int, int] | None = None,
        lr_affine: np.ndarray | None = None,
    ):
        self.cfg = cfg
        self.coeff = coeff
        self.basis = basis
        self.mlp = mlp
        self.norm = norm
        self.seed = seed
        self.lr_dims = lr_dims
        self.lr_affine = None if lr_affine is None else np.asarray(lr_affine, dtype=np.float64)
        self.sawtooth_cfg = SawtoothConfig(levels=cfg.levels)
        self.oneblob_cfg = OneBlobConfig(n_bins=cfg.n_bins, sigma=cfg.sigma_bins)
        self._cache: _Cache | None = None

    @classmethod
    def create(
        cls,
        cfg: FieldConfig,
        rng: np.random.Generator,
        norm: NormInfo | None = None,
        seed: int | None = None,
        lr_dims: tuple[int, int, int] | None = None,
        lr_affine: np.ndarray | None = None,
    ) -> "FactorGridField":
        # Draw order is fixed (coeff levels, basis levels, MLP) so a seed
        # pins every parameter.
        coeff = None
        if cfg.use_coeff:
            coeff = GridPyramid(
                kind="coefficient",
                levels=[LevelGrid.create(cfg.coeff_resolution, rng) for _ in range(cfg.levels)],
            )
        basis = None
        if cfg.use_basis:
            basis = GridPyramid(
                kind="basis",
                levels=[LevelGrid.create(r, rng) for r in cfg.basis_resolutions()],
            )
        mlp = MLPParams(cfg.mlp_in_features, cfg.mlp_width, rng)
        return cls(cfg, coeff, basis, mlp, norm=norm, seed=seed, lr_dims=lr_dims, lr_affine=lr_affine)

    # ----- parameter plumbing -------------------------------------------------

    def parameters(self) -> list[tuple[str, np.ndarray, np.ndarray]]:
        """(name, float32 values, float64 grad) in checkpoint order."""
        out: list[tuple[str, np.ndarray, np.ndarray]] = []
        if self.coeff is not None:
            for i, g in enumerate(self.coeff.levels):
                out.append((f"coeff.{i}", g.values, g.grad))
        if self.basis is not None:
            for i, g in enumerate(self.basis.levels):
                out.append((f"basis.{i}", g.values, g.grad))
        for name, arr in self.mlp.named():
            out.append((f"mlp.{name}", arr, self.mlp.grads[name]))
        return out

    def grid_parameters(self) -> list[tuple[str, np.ndarray, np.ndarray]]:
        return [p for p in self.parameters() if not p[0].startswith("mlp.")]

    def mlp_parameters(self) -> list[tuple[str, np.ndarray, np.ndarray]]:
        return [p for p in self.parameters() if p[0].startswith("mlp.")]

    def zero_grads(self) -> None:
        for pyramid in (self.coeff, self.basis):
            if pyramid is not None:
                for g in pyramid.levels:
                    g.zero_grad()
        self.mlp.zero_grads()

    # ----- forward ------------------------------------------------------------

    def _factor_terms(self, pts: np.ndarray, want_gathers: bool):
        n = len(pts)
        k = self.cfg.levels
        coeff_gather = None
        if self.coeff is not None:
            # Constant resolution: one set of cell indices/weights serves all levels.
            idx, w = cell_weights(self.cfg.coeff_resolution, pts)
            coeff_vals = np.stack(
                [np.sum(g.values.ravel()[idx].astype(np.float64) * w, axis=1) for g in self.coeff.levels],
                axis=1,
            )
            coeff_gather = (idx, w)
        else:
            coeff_vals = np.ones((n, k), dtype=np.float64)

        basis_gathers = None
        if self.basis is not None:
            basis_cols = []
            basis_gathers = []
            for i, g in enumerate(self.basis.levels, start=1):
                q = sawtooth(pts, i, self.sawtooth_cfg) if self.cfg.use_periodic else pts
                idx, w = cell_weights(g.resolution, q)
                basis_cols.append(np.sum(g.values.ravel()[idx].astype(np.float64) * w, axis=1))
                basis_gathers.append((idx, w))
            basis_vals = np.stack(basis_cols, axis=1)
        else:
            basis_vals = np.ones((n, k), dtype=np.float64)

        if not want_gathers:
            return coeff_vals, basis_vals, None, None
        return coeff_vals, basis_vals, coeff_gather, basis_gathers

    def factor_features(self, point: np.ndarray) -> np.ndarray:
        """Per-level coefficient x basis products; (K,) for one point, (N, K) for a batch."""
        p = np.asarray(point, dtype=np.float64)
        single = p.ndim == 1
        pts = p.reshape(-1, 3)
        coeff_vals, basis_vals, _, _ = self._factor_terms(pts, want_gathers=False)
        s = coeff_vals * basis_vals
        return s[0] if single else s

    def _mlp_forward(self, inputs: np.ndarray):
        w1 = self.mlp.w1.astype(np.float64)
        w2 = self.mlp.w2.astype(np.float64)
        w3 = self.mlp.w3.astype(np.float64)
        z1 = inputs @ w1 + self.mlp.b1.astype(np.float64)
        a1 = np.maximum(z1, 0.0)
        z2 = a1 @ w2 + self.mlp.b2.astype(np.float64)
        a2 = np.maximum(z2, 0.0)
        pred = (a2 @ w3).ravel() + float(self.mlp.b3[0])
        return pred, z1, a1, z2, a2

    def _inputs(self, pts: np.ndarray, want_gathers: bool):
        coeff_vals, basis_vals, cg, bg = self._factor_terms(pts, want_gathers)
        s = coeff_vals * basis_vals
        if self.cfg.use_oneblob:
            inputs = np.concatenate([s, oneblob(pts, self.oneblob_cfg)], axis=1)
        else:
            inputs = s
        return inputs, coeff_vals, basis_vals, cg, bg

    def predict(self, point: np.ndarray) -> float | np.ndarray:
        """Raw (unclamped) intensity prediction at [0,1]^3 coordinates."""
        p = np.asarray(point, dtype=np.float64)
        single = p.ndim == 1
        pts = p.reshape(-1, 3)
        inputs, _, _, _, _ = self._inputs(pts, want_gathers=False)
        pred, _, _, _, _ = self._mlp_forward(inputs)
        return float(pred[0]) if single else pred

    def forward_train(self, points: np.ndarray) -> np.ndarray:
        """Batch forward that caches activations for a following backward()."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        inputs, coeff_vals, basis_vals, cg, bg = self._inputs(pts, want_gathers=True)
        pred, z1, a1, z2, a2 = self._mlp_forward(inputs)
        self._cache = _Cache(
            inputs=inputs,
            mask1=z1 > 0.0,
            a1=a1,
            mask2=z2 > 0.0,
            a2=a2,
            coeff_vals=coeff_vals,
            basis_vals=basis_vals,
            coeff_gather=cg,
            basis_gathers=bg,
        )
        return pred

    # ----- backward -----------------------------------------------------------

    def backward(self, upstream: np.ndarray) -> None:
        """Accumulate d(upstream . pred)/d(param) into the gradient buffers.

        Coordinates are data, not parameters: nothing flows back through the
        sawtooth or one-blob maps.
        """
        if self._cache is None:
            raise RuntimeError("backward() without a cached forward_train() pass")
        cache, self._cache = self._cache, None
        up = np.asarray(upstream, dtype=np.float64).reshape(-1, 1)
        if len(up) != len(cache.inputs):
            raise ValueError("upstream length does not match the cached batch")

        g = self.mlp.grads
        w2 = self.mlp.w2.astype(np.float64)
        w3 = self.mlp.w3.astype(np.float64)

        g["w3"] += cache.a2.T @ up
        g["b3"] += up.sum(axis=0)
        dz2 = (up @ w3.T) * cache.mask2
        g["w2"] += cache.a1.T @ dz2
        g["b2"] += dz2.sum(axis=0)
        dz1 = (dz2 @ w2.T) * cache.mask1
        g["w1"] += cache.inputs.T @ dz1
        g["b1"] += dz1.sum(axis=0)
        d_inputs = dz1 @ self.mlp.w1.astype(np.float64).T
        d_s = d_inputs[:, : self.cfg.levels]

        if self.coeff is not None:
            idx, w = cache.coeff_gather
            for i, grid in enumerate(self.coeff.levels):
                dc = d_s[:, i] * cache.basis_vals[:, i]
                np.add.at(grid.grad.reshape(-1), idx, w * dc[:, None])
        if self.basis is not None:
            for i, grid in enumerate(self.basis.levels):
                idx, w = cache.basis_gathers[i]
                db = d_s[:, i] * cache.coeff_vals[:, i]
                np.add.at(grid.grad.reshape(-1), idx, w * db[:, None])


# ----- module-level conveniences matching the op surface ----------------------


def two_factor_features(model: FactorGridField, point: np.ndarray) -> np.ndarray:
    return model.factor_features(point)


def predict(model: FactorGridField, point: np.ndarray) -> float | np.ndarray:
    return model.predict(point)


# ----- checkpointing ----------------------------------------------------------


def _norm_to_json(norm: NormInfo | None):
    if norm is None:
        return None
    return {
        "bounds_lo": [float(x) for x in norm.bounds.lo],
        "bounds_hi": [float(x) for x in norm.bounds.hi],
        "intensity_range": [float(norm.intensity_range[0]), float(norm.intensity_range[1])],
    }


def save_checkpoint(model: FactorGridField, path, train_config: dict | None = None) -> None:
    """Single-file checkpoint: magic, version, JSON config block, then all
    parameter tensors as little-endian float32 in parameters() order."""
    params = model.parameters()
    header = {
        "config": asdict(model.cfg),
        "frequencies": list(model.sawtooth_cfg.frequencies),
        "basis_resolutions": model.cfg.basis_resolutions() if model.cfg.use_basis else [],
        "norm": _norm_to_json(model.norm),
        "seed": model.seed,
        "lr_dims": list(model.lr_dims) if model.lr_dims is not None else None,
        "lr_affine": [float(x) for x in model.lr_affine.ravel()] if model.lr_affine is not None else None,
        "train_config": train_config,
        "tensors": [{"name": name, "shape": list(arr.shape)} for name, arr, _ in params],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for _, arr, _ in params:
            fh.write(arr.astype("<f4").tobytes())


def load_checkpoint(path, expect: FieldConfig | None = None) -> FactorGridField:
    """Rebuild a field from disk; shape or config mismatches raise CheckpointError."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a field checkpoint")
    version, header_len = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    if len(raw) < 12 + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12 : 12 + header_len].decode("utf-8"))
        cfg = FieldConfig(**header["config"])
    except (json.JSONDecodeError, UnicodeDecodeError, TypeError, KeyError) as exc:
        raise CheckpointError(f"{path}: malformed header: {exc}") from exc
    if expect is not None and cfg != expect:
        raise CheckpointError(
            f"{path}: checkpoint config {cfg} does not match the expected config {expect}"
        )
    if cfg.use_basis and header["basis_resolutions"] != cfg.basis_resolutions():
        raise CheckpointError(f"{path}: stored basis resolutions disagree with the config schedule")

    norm = None
    if header.get("norm") is not None:
        n = header["norm"]
        norm = NormInfo(
            bounds=Box(lo=np.array(n["bounds_lo"], dtype=np.float64),
                       hi=np.array(n["bounds_hi"], dtype=np.float64)),
            intensity_range=(float(n["intensity_range"][0]), float(n["intensity_range"][1])),
        )

    # Materialize with zeros, then fill tensors from the payload in order.
    rng = np.random.default_rng(0)
    model = FactorGridField.create(
        cfg,
        rng,
        norm=norm,
        seed=header.get("seed"),
        lr_dims=tuple(header["lr_dims"]) if header.get("lr_dims") else None,
        lr_affine=np.array(header["lr_affine"]).reshape(4, 4) if header.get("lr_affine") else None,
    )
    params = model.parameters()
    declared = header["tensors"]
    if [d["name"] for d in declared] != [name for name, _, _ in params]:
        raise CheckpointError(f"{path}: tensor list does not match the declared config")
    offset = 12 + header_len
    for decl, (name, arr, _) in zip(declared, params):
        if tuple(decl["shape"]) != arr.shape:
            raise CheckpointError(
                f"{path}: tensor {name} has shape {decl['shape']}, config expects {list(arr.shape)}"
            )
        nbytes = arr.size * 4
        if offset + nbytes > len(raw):
            raise CheckpointError(f"{path}: payload truncated at tensor {name}")
        arr[...] = np.frombuffer(raw, dtype="<f4", count=arr.size, offset=offset).reshape(arr.shape)
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes after the last tensor")
    return model
