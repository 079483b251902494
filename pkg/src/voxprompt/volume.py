"""Dense 3D volumes: VVOL codec, NPY ingestion, and intensity preprocessing.

Volumes are plain numpy arrays of dtype uint8, int16 or float32 with shape
(D, H, W); the prompt tensor is a float32 array of shape (5, D, H, W).
"""

from __future__ import annotations

import ast
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadHeader,
    BadMagic,
    FortranOrderUnsupported,
    TruncatedPayload,
    UnsupportedDescr,
    UnsupportedVersion,
)

VVOL_MAGIC = b"VVOL"
VVOL_VERSION = 1

# elem code <-> dtype, little-endian payloads
_CODE_TO_DTYPE = {0: np.dtype("u1"), 1: np.dtype("<f4"), 2: np.dtype("<i2")}
_DTYPE_TO_CODE = {np.dtype("u1"): 0, np.dtype("<f4"): 1, np.dtype("<i2"): 2}

SUPPORTED_DTYPES = tuple(_DTYPE_TO_CODE)


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round half away from zero, elementwise."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def encode_vvol(arr: np.ndarray) -> bytes:
    """Serialize a 3D volume or 4D channels-first grid to VVOL bytes."""
    if arr.ndim not in (3, 4):
        raise BadHeader(f"VVOL supports ndim 3 or 4, got {arr.ndim}")
    dt = np.dtype(arr.dtype.str.replace(">", "<"))
    if dt not in _DTYPE_TO_CODE:
        raise BadHeader(f"unsupported dtype {arr.dtype}")
    header = VVOL_MAGIC + struct.pack("<H", VVOL_VERSION)
    header += bytes([_DTYPE_TO_CODE[dt], arr.ndim])
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=dt).tobytes()


def decode_vvol(data: bytes) -> np.ndarray:
    """Parse VVOL bytes back into a numpy array (inverse of encode_vvol)."""
    if len(data) < 4 or data[:4] != VVOL_MAGIC:
        raise BadMagic("stream does not start with 'VVOL'")
    if len(data) < 8:
        raise BadHeader("header truncated")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != VVOL_VERSION:
        raise UnsupportedVersion(f"version {version}")
    code, ndim = data[6], data[7]
    if code not in _CODE_TO_DTYPE:
        raise BadHeader(f"unknown elem code {code}")
    if ndim not in (3, 4):
        raise BadHeader(f"ndim must be 3 or 4, got {ndim}")
    off = 8 + 4 * ndim
    if len(data) < off:
        raise BadHeader("header truncated")
    dims = struct.unpack_from(f"<{ndim}I", data, 8)
    if any(d < 1 for d in dims):
        raise BadHeader(f"non-positive dims {dims}")
    dt = _CODE_TO_DTYPE[code]
    expected = int(np.prod(dims)) * dt.itemsize
    if len(data) - off != expected:
        raise TruncatedPayload(
            f"payload {len(data) - off} bytes, expected {expected} for dims {dims}"
        )
    return np.frombuffer(data, dtype=dt, offset=off).reshape(dims).copy()


def decode_npy(data: bytes) -> np.ndarray:
    """Parse an uncompressed NPY v1.0 byte stream into a 3D volume.

    Only C-order arrays with descr |u1, <i2 or <f4 and exactly 3 dims
    are accepted.
    """
    if len(data) < 6 or data[:6] != b"\x93NUMPY":
        raise BadMagic("not an NPY stream")
    if len(data) < 10:
        raise BadHeader("header truncated")
    major, minor = data[6], data[7]
    if (major, minor) != (1, 0):
        raise BadHeader(f"unsupported NPY version {major}.{minor}")
    (hlen,) = struct.unpack_from("<H", data, 8)
    off = 10 + hlen
    if len(data) < off:
        raise BadHeader("header truncated")
    try:
        header = ast.literal_eval(data[10:off].decode("latin1").strip())
    except (ValueError, SyntaxError) as exc:
        raise BadHeader(f"unparseable header: {exc}") from exc
    if not isinstance(header, dict) or not {"descr", "fortran_order", "shape"} <= set(header):
        raise BadHeader("header missing required keys")
    if header["fortran_order"]:
        raise FortranOrderUnsupported("fortran_order=True")
    descr = header["descr"]
    if descr not in ("|u1", "<i2", "<f4"):
        raise UnsupportedDescr(f"descr {descr!r}")
    shape = tuple(header["shape"])
    if len(shape) != 3 or any(not isinstance(d, int) or d < 1 for d in shape):
        raise BadHeader(f"need 3 positive dims, got {shape}")
    dt = np.dtype(descr)
    expected = int(np.prod(shape)) * dt.itemsize
    if len(data) - off != expected:
        raise TruncatedPayload(
            f"payload {len(data) - off} bytes, expected {expected} for shape {shape}"
        )
    return np.frombuffer(data, dtype=dt, offset=off).reshape(shape).copy()


@dataclass(frozen=True)
class WindowPreset:
    """CT intensity window given as width/level in Hounsfield units."""

    name: str
    width: float
    level: float

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError("window width must be positive")


WINDOW_PRESETS = {
    "soft": WindowPreset("soft", 400, 40),
    "lung": WindowPreset("lung", 1500, -160),
    "brain": WindowPreset("brain", 80, 40),
    "bone": WindowPreset("bone", 1800, 400),
}


def preprocess_ct(vol: np.ndarray, preset: WindowPreset) -> np.ndarray:
    """Window a CT volume in HU to the [0, 255] uint8 model range."""
    if vol.dtype not in (np.dtype("i2"), np.dtype("f4")):
        raise TypeError(f"expected int16 or float32 HU volume, got {vol.dtype}")
    low = preset.level - preset.width / 2.0
    x = np.clip((vol.astype(np.float64) - low) / preset.width, 0.0, 1.0)
    return round_half_away(x * 255.0).astype(np.uint8)


def _nearest_rank(sorted_vals: np.ndarray, pct: float) -> float:
    """Nearest-rank percentile over a sorted flat array."""
    n = sorted_vals.size
    rank = max(1, int(np.ceil(pct / 100.0 * n)))
    return float(sorted_vals[rank - 1])


def preprocess_percentile(vol: np.ndarray) -> np.ndarray:
    """Clip to the [0.5, 99.5] percentile range and rescale to [0, 255] uint8.

    uint8 input is already in range and is returned unchanged.
    A degenerate percentile range yields an all-zero volume.
    """
    if vol.dtype == np.uint8:
        return vol.copy()
    flat = np.sort(vol.astype(np.float64), axis=None)
    lo = _nearest_rank(flat, 0.5)
    hi = _nearest_rank(flat, 99.5)
    if hi == lo:
        return np.zeros(vol.shape, dtype=np.uint8)
    x = (np.clip(vol.astype(np.float64), lo, hi) - lo) / (hi - lo)
    return round_half_away(x * 255.0).astype(np.uint8)
