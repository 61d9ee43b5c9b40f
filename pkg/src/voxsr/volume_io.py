"""Dense 3D volumes: the canonical ``vvol`` on-disk format, NIfTI-1 import,
intensity normalization, and block-mean downsampling.

Conventions used everywhere in this package:

* a volume is indexed ``data[i, j, k]`` with ``i`` along x, ``j`` along y,
  ``k`` along z;
* flat (serialized) order is x-fastest, i.e. ``data.ravel(order="F")``;
* the affine maps homogeneous voxel indices ``(i, j, k, 1)`` to scanner-space
  millimeters.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, TruncationError, UnsupportedError

VVOL_MAGIC_FIELDS = ("dims", "affine", "dtype", "range")


@dataclass
class VolumeHeader:
    """Metadata block of a ``vvol`` file; round-trips losslessly."""

    dims: tuple[int, int, int]
    affine: np.ndarray
    dtype: str = "f32"
    endianness: str = "le"
    intensity_range: tuple[float, float] = (0.0, 1.0)


@dataclass
class Volume3D:
    """A dense scalar volume with voxel-to-scanner geometry.

    ``data`` is float32 with shape ``dims``; ``intensity_range`` records the
    raw (min, max) captured when the volume was normalized, so predictions can
    be mapped back to raw units.
    """

    data: np.ndarray
    affine: np.ndarray
    intensity_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ValueError(f"volume data must be 3D, got shape {self.data.shape}")
        self.affine = np.asarray(self.affine, dtype=np.float64).reshape(4, 4)
        if abs(np.linalg.det(self.affine[:3, :3])) < 1e-12:
            raise ValueError("affine upper-left 3x3 block is singular")
        lo, hi = self.intensity_range
        self.intensity_range = (float(lo), float(hi))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    def flat(self) -> np.ndarray:
        """Intensities in x-fastest order, aligned with voxel_coords()."""
        return self.data.ravel(order="F")

    def header(self) -> VolumeHeader:
        return VolumeHeader(
            dims=self.dims,
            affine=self.affine.copy(),
            intensity_range=self.intensity_range,
        )


def save_vvol(volume: Volume3D, path: str | Path) -> None:
    """Write ``volume`` as a one-line JSON header plus raw float32 payload."""
    header = {
        "dims": list(volume.dims),
        "affine": [float(x) for x in volume.affine.ravel()],
        "dtype": "f32",
        "range": [float(volume.intensity_range[0]), float(volume.intensity_range[1])],
    }
    payload = volume.data.astype("<f4").ravel(order="F").tobytes()
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        fh.write(payload)


def load_vvol(path: str | Path) -> Volume3D:
    """Read a ``vvol`` file written by :func:`save_vvol`.

    Raises FormatError for a bad header and TruncationError when the payload
    length does not match the header dims.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    newline = raw.find(b"\n")
    if newline < 0:
        raise FormatError(f"{path}: no header line found")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed JSON header: {exc}") from exc
    if not isinstance(header, dict) or any(k not in header for k in VVOL_MAGIC_FIELDS):
        raise FormatError(f"{path}: header must contain fields {VVOL_MAGIC_FIELDS}")
    if header["dtype"] != "f32":
        raise FormatError(f"{path}: unsupported dtype tag {header['dtype']!r}")
    dims = tuple(int(n) for n in header["dims"])
    if len(dims) != 3 or any(n <= 0 for n in dims):
        raise FormatError(f"{path}: bad dims {dims}")
    affine = np.array(header["affine"], dtype=np.float64)
    if affine.size != 16:
        raise FormatError(f"{path}: affine must hold 16 values")
    count = dims[0] * dims[1] * dims[2]
    payload = raw[newline + 1 :]
    if len(payload) != 4 * count:
        raise TruncationError(
            f"{path}: payload holds {len(payload) // 4} float32 values, header promises {count}"
        )
    data = np.frombuffer(payload, dtype="<f4", count=count)
    data = data.reshape(dims, order="F").copy()
    rng = header["range"]
    return Volume3D(
        data=data,
        affine=affine.reshape(4, 4),
        intensity_range=(float(rng[0]), float(rng[1])),
    )


# NIfTI-1 datatype codes we accept.
_NIFTI_DTYPES = {2: np.uint8, 4: np.int16, 16: np.float32}


def _quaternion_affine(hdr: dict) -> np.ndarray:
    b, c, d = hdr["quatern"]
    a_sq = 1.0 - (b * b + c * c + d * d)
    a = np.sqrt(max(a_sq, 0.0))
    rot = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * b * c - 2 * a * d, 2 * b * d + 2 * a * c],
            [2 * b * c + 2 * a * d, a * a + c * c - b * b - d * d, 2 * c * d - 2 * a * b],
            [2 * b * d - 2 * a * c, 2 * c * d + 2 * a * b, a * a + d * d - b * b - c * c],
        ]
    )
    qfac = hdr["pixdim"][0]
    if qfac == 0.0:
        qfac = 1.0
    spacing = np.array([hdr["pixdim"][1], hdr["pixdim"][2], qfac * hdr["pixdim"][3]])
    affine = np.eye(4)
    affine[:3, :3] = rot * spacing[np.newaxis, :]
    affine[:3, 3] = hdr["qoffset"]
    return affine


def import_nifti(path: str | Path) -> Volume3D:
    """Read an uncompressed single-file NIfTI-1 volume.

    Accepts uint8 / int16 / float32 data with a single timepoint. The affine
    comes from the sform rows when sform_code > 0, else from the qform
    quaternion, else from a diagonal pixdim spacing matrix. Per-file scaling
    (scl_slope / scl_inter) is applied when the slope is nonzero.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 348:
        raise FormatError(f"{path}: file shorter than the 348-byte NIfTI-1 header")
    sizeof_hdr_le = struct.unpack_from("<i", raw, 0)[0]
    sizeof_hdr_be = struct.unpack_from(">i", raw, 0)[0]
    if sizeof_hdr_le == 348:
        end = "<"
    elif sizeof_hdr_be == 348:
        end = ">"
    else:
        raise FormatError(f"{path}: sizeof_hdr is not 348; not a NIfTI-1 file")
    magic = raw[344:348]
    if magic != b"n+1\x00":
        raise FormatError(f"{path}: magic {magic!r} is not the single-file 'n+1'")

    dim = struct.unpack_from(end + "8h", raw, 40)
    datatype = struct.unpack_from(end + "h", raw, 70)[0]
    pixdim = struct.unpack_from(end + "8f", raw, 76)
    vox_offset = struct.unpack_from(end + "f", raw, 108)[0]
    scl_slope = struct.unpack_from(end + "f", raw, 112)[0]
    scl_inter = struct.unpack_from(end + "f", raw, 116)[0]
    qform_code = struct.unpack_from(end + "h", raw, 252)[0]
    sform_code = struct.unpack_from(end + "h", raw, 254)[0]
    quatern = struct.unpack_from(end + "3f", raw, 256)
    qoffset = struct.unpack_from(end + "3f", raw, 268)
    srow = np.array(struct.unpack_from(end + "12f", raw, 280), dtype=np.float64)

    ndim = dim[0]
    if ndim < 3 or ndim > 7:
        raise UnsupportedError(f"{path}: dim[0]={ndim}, need a 3D volume")
    if any(dim[ax] > 1 for ax in range(4, ndim + 1)):
        raise UnsupportedError(f"{path}: multiple timepoints/volumes are not supported")
    dims = tuple(int(dim[ax]) for ax in (1, 2, 3))
    if any(n <= 0 for n in dims):
        raise FormatError(f"{path}: non-positive dims {dims}")
    if datatype not in _NIFTI_DTYPES:
        raise UnsupportedError(f"{path}: datatype code {datatype} not in {sorted(_NIFTI_DTYPES)}")

    if sform_code > 0:
        affine = np.eye(4)
        affine[:3, :] = srow.reshape(3, 4)
    elif qform_code > 0:
        affine = _quaternion_affine({"quatern": quatern, "qoffset": qoffset, "pixdim": pixdim})
    else:
        affine = np.diag([pixdim[1] or 1.0, pixdim[2] or 1.0, pixdim[3] or 1.0, 1.0])

    count = dims[0] * dims[1] * dims[2]
    offset = int(round(vox_offset)) if vox_offset else 352
    dtype = np.dtype(_NIFTI_DTYPES[datatype]).newbyteorder(end)
    itemsize = dtype.itemsize
    if len(raw) < offset + count * itemsize:
        raise TruncationError(f"{path}: payload truncated, expected {count} voxels")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).astype(np.float64)
    if scl_slope not in (0.0, 1.0) or (scl_slope == 1.0 and scl_inter != 0.0):
        data = data * scl_slope + scl_inter
    data = data.reshape(dims, order="F")
    return Volume3D(
        data=data.astype(np.float32),
        affine=affine,
        intensity_range=(float(data.min()), float(data.max())),
    )


def normalize(volume: Volume3D) -> Volume3D:
    """Min-max rescale intensities to [0, 1], recording the raw range."""
    lo = float(volume.data.min())
    hi = float(volume.data.max())
    if not hi > lo:
        raise ValueError(f"cannot normalize a constant volume (value {lo})")
    data = (volume.data.astype(np.float64) - lo) / (hi - lo)
    return Volume3D(data=data, affine=volume.affine.copy(), intensity_range=(lo, hi))


def _block_affine(affine: np.ndarray, k: int) -> np.ndarray:
    # Coarse voxel i sits at the scanner-space center of fine block [k*i, k*i + k - 1].
    scale = np.eye(4)
    scale[0, 0] = scale[1, 1] = scale[2, 2] = float(k)
    scale[:3, 3] = (k - 1) / 2.0
    return affine @ scale


def downsample(volume: Volume3D, k: int) -> Volume3D:
    """Average k-cubed blocks; output dims are floor(dims / k).

    The output affine places each coarse voxel center at the scanner-space
    center of its source block, so fine and coarse grids sample the same
    underlying geometry.
    """
    k = int(k)
    if k < 2:
        raise ValueError(f"downsample factor must be >= 2, got {k}")
    h, w, d = volume.dims
    if min(h, w, d) < k:
        raise ValueError(f"factor {k} exceeds volume dims {volume.dims}")
    oh, ow, od = h // k, w // k, d // k
    cropped = volume.data[: oh * k, : ow * k, : od * k].astype(np.float64)
    blocks = cropped.reshape(oh, k, ow, k, od, k)
    means = blocks.mean(axis=(1, 3, 5))
    return Volume3D(
        data=means,
        affine=_block_affine(volume.affine, k),
        intensity_range=volume.intensity_range,
    )


def scale_geometry(
    dims: tuple[int, int, int], affine: np.ndarray, k: int
) -> tuple[tuple[int, int, int], np.ndarray]:
    """Dims and affine of the fine grid whose k-block means a coarse grid holds.

    Inverse of the geometry transform applied by :func:`downsample`; with k=1
    it returns the geometry unchanged.
    """
    k = int(k)
    if k < 1:
        raise ValueError(f"upsample factor must be >= 1, got {k}")
    inv = np.eye(4)
    inv[0, 0] = inv[1, 1] = inv[2, 2] = 1.0 / k
    inv[:3, 3] = -(k - 1) / (2.0 * k)
    fine_dims = tuple(int(n) * k for n in dims)
    return fine_dims, np.asarray(affine, dtype=np.float64).reshape(4, 4) @ inv


def upsampled_geometry(volume: Volume3D, k: int) -> tuple[tuple[int, int, int], np.ndarray]:
    return scale_geometry(volume.dims, volume.affine, k)


def crop(volume: Volume3D, dims: tuple[int, int, int]) -> Volume3D:
    """Keep the leading ``dims`` voxels per axis (affine unchanged: index 0 stays put)."""
    h, w, d = dims
    if any(want > have for want, have in zip(dims, volume.dims)):
        raise ValueError(f"cannot crop {volume.dims} to {dims}")
    return Volume3D(
        data=volume.data[:h, :w, :d].copy(),
        affine=volume.affine.copy(),
        intensity_range=volume.intensity_range,
    )
