"""Segmentation backends behind one interface: corruption oracle,
region-growth baseline, and a child-process adapter for real models."""

from __future__ import annotations

import subprocess
from dataclasses import dataclass

import numpy as np
import scipy.ndimage as ndi

from .errors import (
    ChildExitNonzero,
    ChildLaunchFailed,
    ChildTimeout,
    ProtocolError,
    ShapeMismatch,
)
from .prompts import stamp_sphere
from .volume import decode_vvol, encode_vvol

P_FG = 0.9  # probability assigned to predicted foreground
P_BG = 0.1


def check_probability_volume(out: np.ndarray, spatial_shape) -> np.ndarray:
    """Shared output validation: spatial shape, finiteness, [0, 1] range."""
    if out.shape != tuple(spatial_shape):
        raise ProtocolError(f"output shape {out.shape} != {tuple(spatial_shape)}")
    if not np.isfinite(out).all():
        raise ProtocolError("non-finite values in segmenter output")
    if out.min() < 0.0 or out.max() > 1.0:
        raise ProtocolError("segmenter output outside [0, 1]")
    return out.astype(np.float32)


class SegmenterBase:
    """A segmenter maps a (5, D, H, W) prompt tensor to a (D, H, W)
    probability volume in [0, 1]."""

    def segment(self, prompt: np.ndarray) -> np.ndarray:
        if prompt.ndim != 4 or prompt.shape[0] != 5:
            raise ShapeMismatch(f"prompt must be (5, D, H, W), got {prompt.shape}")
        out = self._run(prompt)
        return check_probability_volume(out, prompt.shape[1:])

    def _run(self, prompt: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def set_frame(self, crop_spec, full_shape) -> None:
        """Optional hook: the episode driver announces the crop that maps
        the prompt patch into full-volume coordinates. Default: ignore."""


@dataclass(frozen=True)
class OracleConfig:
    flip_rate: float = 0.0  # fraction of voxels flipped before any click
    blob_count: int = 0  # spurious wrong-label spheres
    blob_radius: int = 3
    decay: float = 1.0  # per-click multiplicative corruption reduction
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.flip_rate <= 1.0:
            raise ValueError("flip_rate must be in [0, 1]")
        if not 0.0 <= self.decay <= 1.0:
            raise ValueError("decay must be in [0, 1]")


def oracle_segment(gt: np.ndarray, cfg: OracleConfig, clicks_so_far: int) -> np.ndarray:
    """Ground truth corrupted by seeded voxel flips and wrong-label blobs.

    Exactly round(flip_rate * decay**clicks_so_far * n) voxels are flipped,
    chosen without replacement. Output probabilities are 0.9 / 0.1 so
    downstream strict-threshold logic sees non-degenerate values.
    """
    rng = np.random.default_rng([cfg.seed, clicks_so_far])
    seg = (gt > 0).copy()
    n = seg.size
    n_flip = int(round(cfg.flip_rate * cfg.decay**clicks_so_far * n))
    if n_flip > 0:
        idx = rng.choice(n, size=n_flip, replace=False)
        flat = seg.ravel()
        flat[idx] ^= True
    for _ in range(cfg.blob_count):
        center = tuple(int(rng.integers(0, s)) for s in seg.shape)
        wrong = not bool(gt[center] > 0)
        blob = np.zeros(seg.shape, dtype=np.uint8)
        stamp_sphere(blob, center, cfg.blob_radius)
        seg[blob > 0] = wrong
    return np.where(seg, P_FG, P_BG).astype(np.float32)


class OracleSegmenter(SegmenterBase):
    """Test double returning (optionally corrupted) ground truth; the
    corruption decays with every call after the first."""

    def __init__(self, gt: np.ndarray, cfg: OracleConfig = OracleConfig()):
        self.gt = gt
        self.cfg = cfg
        self.calls = 0
        self._crop_spec = None

    def reset(self) -> None:
        self.calls = 0

    def set_frame(self, crop_spec, full_shape) -> None:
        self._crop_spec = crop_spec

    def _run(self, prompt: np.ndarray) -> np.ndarray:
        gt = self.gt
        if self._crop_spec is not None:
            from .crop import extract_patch

            gt = extract_patch((gt > 0).astype(np.uint8), self._crop_spec, "nearest")
        elif gt.shape != prompt.shape[1:]:
            raise ShapeMismatch(
                f"gt shape {gt.shape} != patch {prompt.shape[1:]} and no crop frame"
            )
        out = oracle_segment(gt, self.cfg, self.calls)
        self.calls += 1
        return out


_STRUCT_6 = ndi.generate_binary_structure(3, 1)


def region_grow_segment(prompt: np.ndarray, tol: float = 10.0) -> np.ndarray:
    """Intensity-tolerance region growth over all five prompt channels.

    Seeds are the positive-click voxels (bbox center as fallback, volume
    center if there is no bbox either); nonzero previous-segmentation
    voxels join the seeds. Growth covers 6-connected voxels whose image
    intensity is within tol of the seed mean, confined to the bbox when
    one is present. Negative-click spheres are forced to background.
    """
    x0, x1, x2, x3, x4 = prompt
    box = x1 > 0.5
    seeds = x2 > 0.5
    if not seeds.any():
        seeds = np.zeros(x0.shape, dtype=bool)
        if box.any():
            idx = np.argwhere(box)
            center = tuple((idx.min(0) + idx.max(0)) // 2)
        else:
            center = tuple(s // 2 for s in x0.shape)
        seeds[center] = True
    prev = x4 > 0.5
    if prev.any():
        seeds = seeds | prev
    seed_mean = float(x0[seeds].mean())
    domain = box if box.any() else np.ones(x0.shape, dtype=bool)
    candidate = (np.abs(x0 - seed_mean) <= tol) & domain
    candidate |= seeds
    labels, _ = ndi.label(candidate, structure=_STRUCT_6)
    keep = np.unique(labels[seeds])
    keep = keep[keep > 0]
    grown = np.isin(labels, keep)
    grown &= domain
    grown &= ~(x3 > 0.5)
    return np.where(grown, P_FG, P_BG).astype(np.float32)


class RegionGrowthSegmenter(SegmenterBase):
    def __init__(self, tol: float = 10.0):
        self.tol = tol

    def _run(self, prompt: np.ndarray) -> np.ndarray:
        return region_grow_segment(prompt, self.tol)


class ExternalSegmenter(SegmenterBase):
    """One-request-one-response child process speaking VVOL over stdio.

    The child receives one VVOL (ndim=4, f32, 5 channels) on stdin and
    must write one VVOL (ndim=3, f32) to stdout, log to stderr, and exit 0.
    A single adapter instance must not be used concurrently.
    """

    def __init__(self, command: list[str], timeout: float = 60.0):
        self.command = list(command)
        self.timeout = timeout

    def _run(self, prompt: np.ndarray) -> np.ndarray:
        payload = encode_vvol(prompt.astype(np.float32))
        try:
            proc = subprocess.run(
                self.command,
                input=payload,
                stdout=subprocess.PIPE,
                timeout=self.timeout,
            )
        except (FileNotFoundError, PermissionError, OSError) as exc:
            raise ChildLaunchFailed(str(exc)) from exc
        except subprocess.TimeoutExpired as exc:
            raise ChildTimeout(f"child exceeded {self.timeout} s") from exc
        if proc.returncode != 0:
            raise ChildExitNonzero(f"exit code {proc.returncode}")
        try:
            out = decode_vvol(proc.stdout)
        except Exception as exc:
            raise ProtocolError(f"bad child response: {exc}") from exc
        if out.ndim != 3 or out.dtype != np.dtype("<f4"):
            raise ProtocolError(f"expected ndim=3 f32 volume, got {out.ndim}D {out.dtype}")
        return check_probability_volume(out, prompt.shape[1:])
