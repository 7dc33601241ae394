"""Core array carriers and their binary file formats.

Two little-endian containers:

* "QSTK" frame stacks: magic(4) | version u16 | dtype u16 (0=float64) |
  width u32 | height u32 | n_frames u32 | reserved u32, then frame-major,
  row-major float64 payload. Cumulant stacks reuse the container with the
  n_frames field holding the number of orders.
* "QMAP" field maps: magic(4) | version u16 | dtype u16 (0=f64, 1=c128 as
  two planes) | width u32 | height u32 | planes u32 | pixel_pitch f64,
  then row-major payload.

Both round-trip bit-exactly. 16-bit PGM export is for eyeballing only; the
linear scaling used is recorded in a sidecar text file.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError

QSTK_MAGIC = b"QSTK"
QMAP_MAGIC = b"QMAP"
_QSTK_HEAD = struct.Struct("<4sHHIIII")
_QMAP_HEAD = struct.Struct("<4sHHIIId")


@dataclass(frozen=True)
class FieldMap:
    """2-D real image with pixel-pitch metadata (pitch in original pixel units)."""

    values: np.ndarray
    pixel_pitch: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ContractError("FieldMap values must be 2-D")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class FrameStack:
    """Photon-count frames, shape (n_frames, height, width), photoelectrons.

    Values are integer-valued before readout noise, real after.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ContractError("FrameStack values must be (n_frames, height, width)")
        if not np.all(np.isfinite(v)):
            raise ContractError("FrameStack values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


# ---------------------------------------------------------------------------
# QSTK

def write_qstk(path, values: np.ndarray) -> None:
    """Write a (n, height, width) float64 array as a QSTK container."""
    v = np.ascontiguousarray(values, dtype="<f8")
    if v.ndim != 3:
        raise ContractError("QSTK payload must be 3-D (n, height, width)")
    n, h, w = v.shape
    with open(path, "wb") as f:
        f.write(_QSTK_HEAD.pack(QSTK_MAGIC, 1, 0, w, h, n, 0))
        f.write(v.tobytes())


def read_qstk(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _QSTK_HEAD.size:
        raise FormatError("truncated QSTK header", offset=len(raw))
    magic, version, dtype, w, h, n, _ = _QSTK_HEAD.unpack_from(raw, 0)
    if magic != QSTK_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {QSTK_MAGIC!r}", offset=0)
    if version != 1:
        raise FormatError(f"unsupported QSTK version {version}", offset=4)
    if dtype != 0:
        raise FormatError(f"unsupported QSTK dtype code {dtype}", offset=6)
    expect = _QSTK_HEAD.size + 8 * n * h * w
    if len(raw) != expect:
        raise FormatError(
            f"payload size mismatch: file has {len(raw)} bytes, header implies {expect}",
            offset=min(len(raw), expect))
    data = np.frombuffer(raw, dtype="<f8", offset=_QSTK_HEAD.size)
    return data.reshape(n, h, w).copy()


def write_stack(path, stack: FrameStack) -> None:
    write_qstk(path, stack.values)


def read_stack(path) -> FrameStack:
    return FrameStack(read_qstk(path))


# ---------------------------------------------------------------------------
# QMAP

def write_qmap(path, values: np.ndarray, pixel_pitch: float = 1.0) -> None:
    """Write a real (h, w) / (planes, h, w) or complex (h, w) map as QMAP."""
    v = np.asarray(values)
    if np.iscomplexobj(v):
        if v.ndim != 2:
            raise ContractError("complex QMAP payload must be 2-D")
        planes = np.stack([v.real, v.imag]).astype("<f8")
        dtype = 1
    else:
        v = v.astype("<f8")
        planes = v[None, :, :] if v.ndim == 2 else v
        if planes.ndim != 3:
            raise ContractError("QMAP payload must be 2-D or (planes, h, w)")
        dtype = 0
    p, h, w = planes.shape
    with open(path, "wb") as f:
        f.write(_QMAP_HEAD.pack(QMAP_MAGIC, 1, dtype, w, h, p, float(pixel_pitch)))
        f.write(np.ascontiguousarray(planes).tobytes())


def read_qmap(path):
    """Read a QMAP container; returns (array, pixel_pitch).

    dtype 0 comes back as (h, w) for one plane or (planes, h, w); dtype 1
    as a complex (h, w) array.
    """
    raw = Path(path).read_bytes()
    if len(raw) < _QMAP_HEAD.size:
        raise FormatError("truncated QMAP header", offset=len(raw))
    magic, version, dtype, w, h, p, pitch = _QMAP_HEAD.unpack_from(raw, 0)
    if magic != QMAP_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {QMAP_MAGIC!r}", offset=0)
    if version != 1:
        raise FormatError(f"unsupported QMAP version {version}", offset=4)
    if dtype not in (0, 1):
        raise FormatError(f"unsupported QMAP dtype code {dtype}", offset=6)
    expect = _QMAP_HEAD.size + 8 * p * h * w
    if len(raw) != expect:
        raise FormatError(
            f"payload size mismatch: file has {len(raw)} bytes, header implies {expect}",
            offset=min(len(raw), expect))
    data = np.frombuffer(raw, dtype="<f8", offset=_QMAP_HEAD.size).reshape(p, h, w)
    if dtype == 1:
        if p != 2:
            raise FormatError(f"complex QMAP needs 2 planes, header says {p}", offset=12)
        return (data[0] + 1j * data[1]).copy(), pitch
    return (data[0].copy() if p == 1 else data.copy()), pitch


def write_field_map(path, fm: FieldMap) -> None:
    write_qmap(path, fm.values, fm.pixel_pitch)


def read_field_map(path) -> FieldMap:
    arr, pitch = read_qmap(path)
    if arr.ndim != 2 or np.iscomplexobj(arr):
        raise FormatError("QMAP does not hold a single real plane")
    return FieldMap(arr, pitch)


# ---------------------------------------------------------------------------
# PGM (visual inspection only)

def write_pgm16(path, values: np.ndarray) -> None:
    """16-bit binary PGM with linear min-max scaling; scaling goes to a sidecar."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    span = hi - lo if hi > lo else 1.0
    scaled = np.round((v - lo) / span * 65535.0).astype(">u2")
    h, w = v.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode())
        f.write(scaled.tobytes())
    Path(str(path) + ".scale.txt").write_text(
        f"linear min-max scaling\nmin = {lo!r}\nmax = {hi!r}\n"
        f"pgm_value = round((value - min) / (max - min) * 65535)\n")
