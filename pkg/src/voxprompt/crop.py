"""Content-aware dynamic cropping: zoom factor, centered padded crop,
and pasting predictions back into full-volume coordinates."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import InvalidBBox
from .kernels import resample
from .prompts import BBox3

Shape3 = tuple[int, int, int]


@dataclass(frozen=True)
class CropSpec:
    zoom: float  # scalar zoom z >= 1, shared across axes
    scaled_patch: Shape3  # window size read from the volume
    origin: Shape3  # signed window start; negative parts are padding
    target_patch: Shape3  # network input dims
    pad_value: float = 0.0


def compute_crop(bbox: BBox3, patch: Shape3, shape: Shape3) -> CropSpec:
    """Zoom so the bbox fits the patch with a one-third margin, then center.

    z = max_d (bbox_size_d + patch_d / 3) / patch_d, floored at 1; a single
    scalar so anatomy keeps its aspect ratio. scaled_patch_d = ceil(z * patch_d),
    origin_d = floor(bbox_center_d - scaled_patch_d / 2), unclamped.
    Computed in exact rational arithmetic to dodge float ceil artifacts.
    """
    bbox.validate(shape)
    if any(p < 1 for p in patch):
        raise InvalidBBox(f"patch dims must be >= 1, got {patch}")
    size = bbox.size
    z = max(Fraction(1), *(Fraction(3 * s + p, 3 * p) for s, p in zip(size, patch)))
    scaled = tuple(int(-((-z * p) // 1)) for p in patch)  # ceil(z * p), exact
    origin = tuple((l + h - s) // 2 for l, h, s in zip(bbox.lo, bbox.hi, scaled))
    return CropSpec(
        zoom=float(z),
        scaled_patch=scaled,
        origin=origin,
        target_patch=tuple(int(p) for p in patch),
    )


def _window_slices(spec: CropSpec, shape: Shape3):
    """Per axis: (dst slice in window, src slice in volume) intersection."""
    pairs = []
    for o, w, s in zip(spec.origin, spec.scaled_patch, shape):
        src_lo, src_hi = max(o, 0), min(o + w, s)
        if src_lo >= src_hi:
            return None
        pairs.append((slice(src_lo - o, src_hi - o), slice(src_lo, src_hi)))
    return pairs


def extract_patch(vol: np.ndarray, spec: CropSpec, mode: str = "trilinear") -> np.ndarray:
    """Read the scaled window (padding out-of-volume voxels with pad_value)
    and resample it to the target patch dims."""
    window = np.full(spec.scaled_patch, spec.pad_value, dtype=vol.dtype)
    pairs = _window_slices(spec, vol.shape)
    if pairs is not None:
        (dz, sz), (dy, sy), (dx, sx) = pairs
        window[dz, dy, dx] = vol[sz, sy, sx]
    return resample(window, spec.target_patch, mode)


def paste_prediction(pred_patch: np.ndarray, spec: CropSpec, shape: Shape3) -> np.ndarray:
    """Inverse of extract_patch for probability volumes: upsample to the
    scaled window and write the in-volume part into a zero full volume."""
    if pred_patch.shape != spec.target_patch:
        raise InvalidBBox(
            f"patch shape {pred_patch.shape} != target {spec.target_patch}"
        )
    window = resample(pred_patch.astype(np.float32), spec.scaled_patch, "trilinear")
    full = np.zeros(shape, dtype=np.float32)
    pairs = _window_slices(spec, shape)
    if pairs is not None:
        (dz, sz), (dy, sy), (dx, sx) = pairs
        full[sz, sy, sx] = window[dz, dy, dx]
    return full


def to_patch_coords(spec: CropSpec, full: Shape3) -> tuple[int, int, int] | None:
    """Map a full-volume voxel coordinate into the nearest target-patch voxel,
    or None when it falls outside the crop window."""
    out = []
    for c, o, w, t in zip(full, spec.origin, spec.scaled_patch, spec.target_patch):
        scale = w / t
        p = (c - o + 0.5) / scale - 0.5
        i = int(np.ceil(p - 0.5))
        if not 0 <= i < t:
            return None
        out.append(i)
    return tuple(out)
