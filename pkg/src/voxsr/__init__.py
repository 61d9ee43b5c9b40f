"""voxsr: volumetric super-resolution with a trained coefficient/basis grid
field, coordinate encodings, and a tricubic baseline."""

from .coords import Box, CoordSet, default_margin, normalize_coords, shared_bounds, voxel_coords
from .encoders import OneBlobConfig, SawtoothConfig, oneblob, sawtooth
from .errors import CheckpointError, FormatError, TruncationError, UnsupportedError, VoxsrError
from .field import (
    FactorGridField,
    FieldConfig,
    NormInfo,
    load_checkpoint,
    predict,
    save_checkpoint,
    two_factor_features,
)
from .grids import GridPyramid, LevelGrid, resolution_schedule, trilerp, trilerp_backward
from .metrics import MetricsReport, psnr, ssim3d, tricubic_upsample
from .phantom import PhantomSpec, generate
from .trainer import AdamState, TrainConfig, TrainResult, adam_step, infer_volume, mse_loss, train
from .volume_io import (
    Volume3D,
    VolumeHeader,
    crop,
    downsample,
    import_nifti,
    load_vvol,
    normalize,
    save_vvol,
    scale_geometry,
    upsampled_geometry,
)

__version__ = "0.1.0"
