"""Prompt types and rasterization into the 5-channel model input tensor.

Channel layout: 0 image, 1 bounding box, 2 positive clicks, 3 negative
clicks, 4 previous segmentation. Channels 1-4 are binary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ClickOutOfBounds, InvalidBBox, ShapeMismatch

CLICK_RADIUS = 4

Shape3 = tuple[int, int, int]


@dataclass(frozen=True)
class BBox3:
    """Axis-aligned box, lo inclusive, hi exclusive, in (z, y, x) order."""

    lo: Shape3
    hi: Shape3

    def validate(self, shape: Shape3) -> None:
        for a in range(3):
            if not (0 <= self.lo[a] < self.hi[a] <= shape[a]):
                raise InvalidBBox(f"bbox {self.lo}..{self.hi} invalid for shape {shape}")

    @property
    def size(self) -> Shape3:
        return tuple(h - l for l, h in zip(self.lo, self.hi))


@dataclass(frozen=True)
class Click:
    """Single voxel interaction; polarity 'positive' includes, 'negative' excludes."""

    center: Shape3
    polarity: str  # "positive" | "negative"

    def __post_init__(self):
        if self.polarity not in ("positive", "negative"):
            raise ValueError(f"bad polarity {self.polarity!r}")


ClickSet = list  # ordered list of Click; duplicates permitted


def default_bbox(shape: Shape3) -> BBox3:
    """Fallback box covering the central third of the volume, per axis."""
    lo, hi = [], []
    for d in shape:
        a, b = d // 3, (2 * d) // 3
        if b <= a:
            b = min(a + 1, d)
        lo.append(a)
        hi.append(b)
    return BBox3(tuple(lo), tuple(hi))


def _sphere_offsets(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    dz, dy, dx = np.meshgrid(r, r, r, indexing="ij")
    keep = dz * dz + dy * dy + dx * dx <= radius * radius
    return np.stack([dz[keep], dy[keep], dx[keep]], axis=1)


_OFFSETS_CACHE: dict[int, np.ndarray] = {}


def stamp_sphere(mask: np.ndarray, center: Shape3, radius: int = CLICK_RADIUS) -> None:
    """Set to 1 every voxel within Euclidean distance `radius` of `center`,
    clipped at the volume border. In-place."""
    offs = _OFFSETS_CACHE.get(radius)
    if offs is None:
        offs = _OFFSETS_CACHE[radius] = _sphere_offsets(radius)
    pts = offs + np.asarray(center)
    ok = np.all((pts >= 0) & (pts < np.asarray(mask.shape)), axis=1)
    pts = pts[ok]
    mask[pts[:, 0], pts[:, 1], pts[:, 2]] = 1


def rasterize(
    image: np.ndarray,
    bbox: BBox3 | None,
    clicks: ClickSet,
    prev: np.ndarray | None = None,
) -> np.ndarray:
    """Build the (5, D, H, W) float32 prompt tensor.

    An absent bbox leaves channel 1 all zero; an absent previous
    segmentation leaves channel 4 all zero. Click spheres (radius 4,
    Euclidean, boundary inclusive) are clipped at volume borders.
    """
    shape = image.shape
    if image.ndim != 3:
        raise ShapeMismatch(f"image must be 3D, got {image.shape}")
    if prev is not None and prev.shape != shape:
        raise ShapeMismatch(f"prev shape {prev.shape} != image shape {shape}")
    if bbox is not None:
        bbox.validate(shape)

    out = np.zeros((5,) + shape, dtype=np.float32)
    out[0] = image.astype(np.float32)
    if bbox is not None:
        z0, y0, x0 = bbox.lo
        z1, y1, x1 = bbox.hi
        out[1, z0:z1, y0:y1, x0:x1] = 1.0
    for c in clicks:
        if not all(0 <= c.center[a] < shape[a] for a in range(3)):
            raise ClickOutOfBounds(f"click {c.center} outside shape {shape}")
        chan = 2 if c.polarity == "positive" else 3
        stamp_sphere(out[chan], c.center)
    if prev is not None:
        out[4] = (prev > 0).astype(np.float32)
    return out
