"""Voxel kernels: error masks, 26-connected components, exact EDT,
resampling and surface extraction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.ndimage as ndi
from numba import njit

from .errors import ShapeMismatch

_INF = np.int64(1) << 40


def error_mask(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Binary disagreement mask: (pred > 0.5) XOR (gt > 0.5), strict thresholds."""
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"{pred.shape} vs {gt.shape}")
    return ((pred > 0.5) ^ (gt > 0.5)).astype(np.uint8)


@dataclass(frozen=True)
class ComponentStats:
    label: int
    voxel_count: int
    seed: tuple[int, int, int]  # first voxel in z-major scan order


_STRUCT_26 = np.ones((3, 3, 3), dtype=bool)


def connected_components_26(mask: np.ndarray) -> tuple[np.ndarray, list[ComponentStats]]:
    """Label 26-connected foreground components.

    Labels are renumbered by first encounter in z-major scan order, so
    label 1 is the component whose first voxel comes earliest. Returns
    the label map (int32) and per-component stats sorted by label.
    """
    raw, n = ndi.label(mask > 0, structure=_STRUCT_26)
    if n == 0:
        return raw.astype(np.int32), []
    flat = raw.ravel()
    vals, first = np.unique(flat, return_index=True)
    fg = vals > 0
    vals, first = vals[fg], first[fg]
    order = np.argsort(first, kind="stable")
    remap = np.zeros(n + 1, dtype=np.int32)
    remap[vals[order]] = np.arange(1, n + 1, dtype=np.int32)
    labels = remap[raw]
    counts = np.bincount(labels.ravel(), minlength=n + 1)
    seeds = np.unravel_index(first[order], mask.shape)
    stats = [
        ComponentStats(int(i + 1), int(counts[i + 1]),
                       (int(seeds[0][i]), int(seeds[1][i]), int(seeds[2][i])))
        for i in range(n)
    ]
    return labels, stats


@njit(cache=True)
def _edt_lines(f):
    """Exact 1D squared-distance transform (lower envelope of parabolas)
    applied to every row of a 2D int64 array, in place."""
    m, n = f.shape
    v = np.empty(n, np.int64)
    z = np.empty(n + 1, np.float64)
    d = np.empty(n, np.int64)
    for r in range(m):
        k = 0
        v[0] = 0
        z[0] = -1e300
        z[1] = 1e300
        for q in range(1, n):
            fq = f[r, q] + q * q
            p = v[k]
            s = (fq - (f[r, p] + p * p)) / (2.0 * (q - p))
            while s <= z[k]:
                k -= 1
                p = v[k]
                s = (fq - (f[r, p] + p * p)) / (2.0 * (q - p))
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = 1e300
        k = 0
        for q in range(n):
            while z[k + 1] < q:
                k += 1
            p = v[k]
            d[q] = (q - p) * (q - p) + f[r, p]
        for q in range(n):
            f[r, q] = d[q]


def _edt_sq_from_indicator(f: np.ndarray) -> np.ndarray:
    """Three separable passes turning a 0/INF indicator into exact squared EDT."""
    for axis in range(3):
        moved = np.ascontiguousarray(np.moveaxis(f, axis, -1))
        shp = moved.shape
        flat = moved.reshape(-1, shp[-1])
        _edt_lines(flat)
        f = np.moveaxis(flat.reshape(shp), -1, axis)
    return np.ascontiguousarray(f)


def edt_squared(mask: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distance to the nearest zero voxel.

    The volume border counts as adjacent background, so an all-ones
    volume still gets finite values. Integer-exact (int64).
    """
    padded = np.zeros(tuple(s + 2 for s in mask.shape), dtype=np.int64)
    padded[1:-1, 1:-1, 1:-1] = np.where(mask > 0, _INF, np.int64(0))
    out = _edt_sq_from_indicator(padded)
    return out[1:-1, 1:-1, 1:-1]


def sq_distance_to_set(seed_mask: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distance to the nearest voxel of `seed_mask`
    (no virtual border). Values where the set is empty stay huge."""
    f = np.where(seed_mask > 0, np.int64(0), _INF).astype(np.int64)
    return _edt_sq_from_indicator(f)


def _axis_coords(src: int, dst: int) -> np.ndarray:
    scale = src / dst
    x = (np.arange(dst, dtype=np.float64) + 0.5) * scale - 0.5
    return np.clip(x, 0.0, src - 1)


def resample(vol: np.ndarray, target: tuple[int, int, int], mode: str = "trilinear") -> np.ndarray:
    """Resample a 3D volume to `target` dims, align-corners-false.

    Output voxel o maps to input coordinate (o + 0.5) * scale - 0.5,
    clamped. Nearest rounds exact .5 ties toward the lower index.
    Identity (copy) when target equals the source shape.
    """
    target = tuple(int(t) for t in target)
    if target == vol.shape:
        return vol.copy()
    coords = [_axis_coords(s, t) for s, t in zip(vol.shape, target)]
    if mode == "nearest":
        idx = [np.ceil(c - 0.5).astype(np.int64) for c in coords]
        idx = [np.clip(i, 0, s - 1) for i, s in zip(idx, vol.shape)]
        return vol[np.ix_(*idx)].copy()
    if mode != "trilinear":
        raise ValueError(f"unknown mode {mode!r}")
    lo = [np.floor(c).astype(np.int64) for c in coords]
    lo = [np.clip(l, 0, s - 1) for l, s in zip(lo, vol.shape)]
    hi = [np.minimum(l + 1, s - 1) for l, s in zip(lo, vol.shape)]
    frac = [c - l for c, l in zip(coords, lo)]
    w_lo = [1.0 - f for f in frac]
    v = vol.astype(np.float64)
    out = np.zeros(target, dtype=np.float64)
    for bz in (0, 1):
        wz = (w_lo[0] if bz == 0 else frac[0])[:, None, None]
        iz = lo[0] if bz == 0 else hi[0]
        for by in (0, 1):
            wy = (w_lo[1] if by == 0 else frac[1])[None, :, None]
            iy = lo[1] if by == 0 else hi[1]
            for bx in (0, 1):
                wx = (w_lo[2] if bx == 0 else frac[2])[None, None, :]
                ix = lo[2] if bx == 0 else hi[2]
                out += wz * wy * wx * v[np.ix_(iz, iy, ix)]
    if np.issubdtype(vol.dtype, np.integer):
        from .volume import round_half_away

        return round_half_away(out).astype(vol.dtype)
    return out.astype(vol.dtype)


def boundary_mask(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with a 6-neighbor that is background or outside."""
    fg = mask > 0
    p = np.pad(fg, 1)
    interior = (
        p[:-2, 1:-1, 1:-1] & p[2:, 1:-1, 1:-1]
        & p[1:-1, :-2, 1:-1] & p[1:-1, 2:, 1:-1]
        & p[1:-1, 1:-1, :-2] & p[1:-1, 1:-1, 2:]
    )
    return fg & ~interior


def boundary_voxels(mask: np.ndarray) -> set[tuple[int, int, int]]:
    """Coordinate set of boundary_mask."""
    return {tuple(int(c) for c in p) for p in np.argwhere(boundary_mask(mask))}
