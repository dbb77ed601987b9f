"""WaveField serialisation.

CSV: header ``x,re,im`` (1D) or ``x,phi,re,im`` (2D, x-major order).

Binary layout (all little-endian)::

    offset  size  content
    0       4     magic b"WFLD"
    4       4     uint32 format version (1)
    8       4     uint32 dims (1 or 2)
    12      4     uint32 norm convention (0 reduced, 1 covariant)
    16      8     uint64 n_x
    24      8     uint64 n_phi (0 for 1D)
    32      8*n_x               float64 x grid
    ...     8*n_phi             float64 phi grid
    ...     8*n_x               float64 measure weight (covariant only)
    ...     16*n_x*max(n_phi,1) complex128 values, x-major
"""

from __future__ import annotations

import csv
import struct

import numpy as np

from .spectral import WaveField

MAGIC = b"WFLD"
VERSION = 1
_HEADER = struct.Struct("<4sIIIQQ")


def _fmt(v: float) -> str:
    return repr(float(v))


def write_csv(fld: WaveField, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if fld.dims == 1:
            w.writerow(["x", "re", "im"])
            for x, v in zip(fld.x, fld.values):
                w.writerow([_fmt(x), _fmt(v.real), _fmt(v.imag)])
        else:
            w.writerow(["x", "phi", "re", "im"])
            for i, x in enumerate(fld.x):
                for j, p in enumerate(fld.phi):
                    v = fld.values[i, j]
                    w.writerow([_fmt(x), _fmt(p), _fmt(v.real), _fmt(v.imag)])


def read_csv(path, weight=None) -> WaveField:
    """Read a field written by :func:`write_csv`; 2D fields need ``weight`` for the covariant norm."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if header == ["x", "re", "im"]:
        return WaveField(data[:, 0], data[:, 1] + 1j * data[:, 2])
    if header != ["x", "phi", "re", "im"]:
        raise ValueError(f"unrecognised CSV header {header}")
    x = np.unique(data[:, 0])
    phi = np.unique(data[:, 1])
    vals = (data[:, 2] + 1j * data[:, 3]).reshape(x.size, phi.size)
    conv = "covariant" if weight is not None else "reduced"
    return WaveField(x, vals, phi=phi, norm_convention=conv, weight=weight)


def to_bytes(fld: WaveField) -> bytes:
    n_phi = 0 if fld.phi is None else fld.phi.size
    conv = 1 if fld.norm_convention == "covariant" else 0
    parts = [_HEADER.pack(MAGIC, VERSION, fld.dims, conv, fld.x.size, n_phi), fld.x.astype("<f8").tobytes()]
    if n_phi:
        parts.append(fld.phi.astype("<f8").tobytes())
    if conv:
        parts.append(np.asarray(fld.weight).astype("<f8").tobytes())
    parts.append(np.ascontiguousarray(fld.values).astype("<c16").tobytes())
    return b"".join(parts)


def from_bytes(buf: bytes) -> WaveField:
    magic, version, dims, conv, n_x, n_phi = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise ValueError("not a WFLD buffer")
    if version != VERSION:
        raise ValueError(f"unsupported WFLD version {version}")
    off = _HEADER.size

    def take(n, dtype):
        nonlocal off
        arr = np.frombuffer(buf, dtype=dtype, count=n, offset=off)
        off += arr.nbytes
        return arr.copy()

    x = take(n_x, "<f8")
    phi = take(n_phi, "<f8") if dims == 2 else None
    weight = take(n_x, "<f8") if conv else None
    vals = take(n_x * max(n_phi, 1), "<c16")
    if dims == 2:
        vals = vals.reshape(n_x, n_phi)
    return WaveField(x, vals, phi=phi, norm_convention="covariant" if conv else "reduced", weight=weight)


def write_binary(fld: WaveField, path) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(fld))


def read_binary(path) -> WaveField:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
