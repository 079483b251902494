"""voxprompt: interaction-simulation engine for interactive 3D medical
image segmentation."""

__version__ = "0.1.0"

from .clickgen import ClickProposal, apply_click, generate_click
from .crop import CropSpec, compute_crop, extract_patch, paste_prediction
from .harness import (
    EpisodeConfig,
    EpisodeResult,
    TrainingSample,
    evaluate_case,
    fuse_multiclass,
    run_episode,
    sample_training_example,
)
from .kernels import (
    boundary_voxels,
    connected_components_26,
    edt_squared,
    error_mask,
    resample,
)
from .prompts import BBox3, Click, default_bbox, rasterize
from .scoring import (
    IterationScore,
    LossConfig,
    auc,
    bce_loss,
    compound_loss,
    dice,
    nsd,
    soft_dice_loss,
)
from .segmenter import (
    ExternalSegmenter,
    OracleConfig,
    OracleSegmenter,
    RegionGrowthSegmenter,
    SegmenterBase,
    oracle_segment,
    region_grow_segment,
)
from .volume import (
    WINDOW_PRESETS,
    WindowPreset,
    decode_npy,
    decode_vvol,
    encode_vvol,
    preprocess_ct,
    preprocess_percentile,
)
