"""Binary and CSV serialization of fields.

Binary layout: a 16-byte header (ASCII magic ``ELRG``, then little-endian
uint32 dimension, points per side and component count) followed by
little-endian float64 data in row-major order.  Grid-sampled tensor fields
store ``m`` cells per side and ``n(n+1)/2`` upper-triangle components;
scalar fields store ``m+1`` nodes per side and one component.
"""
from __future__ import annotations

import io as _io
import os
import struct

import numpy as np

from .coeff import EllipticityBounds, MatrixField, grid_sampled, n_components
from .mesh import Grid, ScalarField

MAGIC = b"ELRG"
_HEADER = struct.Struct("<4sIII")


class FormatError(ValueError):
    pass


def fmt(x: float) -> str:
    """CSV number: 17 significant digits, ``.`` decimal separator."""
    return f"{float(x):.17g}"


def _write(path, dim: int, side: int, ncomp: int, data: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, dim, side, ncomp))
        fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def _read(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, dim, side, ncomp = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if dim not in (2, 3) or side < 1 or ncomp < 1:
        raise FormatError(f"{path}: bad header dim={dim} side={side} ncomp={ncomp}")
    count = side ** dim * ncomp
    body = raw[_HEADER.size:]
    if len(body) != 8 * count:
        raise FormatError(f"{path}: expected {count} values, found {len(body) // 8}")
    data = np.frombuffer(body, dtype="<f8").astype(float)
    return dim, side, ncomp, data


def write_field_binary(path, field: MatrixField) -> None:
    if field.kind != "grid-sampled":
        raise ValueError("only grid-sampled fields have a binary form")
    data = field.params["data"]
    _write(path, field.n, data.shape[0], data.shape[-1], data)


def read_field_binary(path, bounds: EllipticityBounds) -> MatrixField:
    dim, side, ncomp, data = _read(path)
    if ncomp != n_components(dim):
        raise FormatError(f"{path}: {ncomp} components do not fit a symmetric {dim}x{dim} tensor")
    return grid_sampled(data.reshape((side,) * dim + (ncomp,)), bounds)


def write_scalar_binary(path, u: ScalarField) -> None:
    _write(path, u.grid.n, u.grid.m + 1, 1, u.values)


def read_scalar_binary(path, tag: str = "solution") -> ScalarField:
    dim, side, ncomp, data = _read(path)
    if ncomp != 1:
        raise FormatError(f"{path}: scalar file must have one component, found {ncomp}")
    return ScalarField(Grid(dim, side - 1), data, tag)


def scalar_csv(u: ScalarField) -> str:
    n = u.grid.n
    head = ",".join(["x", "y", "z"][:n] + ["value"])
    x = u.grid.node_coords().reshape(-1, n)
    v = u.values.ravel()
    buf = _io.StringIO()
    buf.write(head + "\n")
    for p, val in zip(x, v):
        buf.write(",".join(fmt(c) for c in p) + "," + fmt(val) + "\n")
    return buf.getvalue()


def write_csv(path, header: str, rows) -> None:
    """Write a header plus pre-formatted rows with LF line endings."""
    with open(path, "w", newline="\n", encoding="ascii") as fh:
        fh.write(header + "\n")
        for r in rows:
            fh.write(r + "\n")


def write_scalar_csv(path, u: ScalarField) -> None:
    with open(path, "w", newline="\n", encoding="ascii") as fh:
        fh.write(scalar_csv(u))


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return str(path)
