"""Cartesian Q1 grids on ``[-1, 1]^n``, nodal fields and ball quadrature."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

GAUSS2 = 1.0 / np.sqrt(3.0)


@dataclass(frozen=True)
class Grid:
    """Uniform grid of ``m`` cells per side on the cube ``[-1, 1]^n``.

    Nodes are indexed lexicographically (C order) with array axis ``d``
    carrying coordinate ``x_{d+1}``.
    """

    n: int
    m: int

    def __post_init__(self):
        if self.n not in (2, 3):
            raise ValueError(f"grid dimension must be 2 or 3, got {self.n}")
        if self.m < 4:
            raise ValueError(f"need at least 4 cells per side, got {self.m}")

    @property
    def h(self) -> float:
        return 2.0 / self.m

    @property
    def node_shape(self) -> tuple:
        return (self.m + 1,) * self.n

    @property
    def cell_shape(self) -> tuple:
        return (self.m,) * self.n

    @property
    def n_nodes(self) -> int:
        return (self.m + 1) ** self.n

    @property
    def n_cells(self) -> int:
        return self.m ** self.n

    @cached_property
    def axis(self) -> np.ndarray:
        return np.linspace(-1.0, 1.0, self.m + 1)

    def node_coords(self) -> np.ndarray:
        """Node coordinates, shape ``node_shape + (n,)``."""
        return np.stack(np.meshgrid(*([self.axis] * self.n), indexing="ij"), axis=-1)

    def cell_centres(self) -> np.ndarray:
        c = -1.0 + self.h * (np.arange(self.m) + 0.5)
        return np.stack(np.meshgrid(*([c] * self.n), indexing="ij"), axis=-1)

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.node_shape, dtype=bool)
        for d in range(self.n):
            idx = [slice(None)] * self.n
            idx[d] = 0
            mask[tuple(idx)] = True
            idx[d] = -1
            mask[tuple(idx)] = True
        return mask

    def centre_index(self) -> tuple:
        if self.m % 2:
            raise ValueError("grid has no node at the origin (odd m)")
        return (self.m // 2,) * self.n

    def corner_offsets(self) -> np.ndarray:
        """Vertex offsets ``{0,1}^n`` of a cell, shape ``(2^n, n)``."""
        return np.array(list(itertools.product((0, 1), repeat=self.n)), dtype=np.int64)


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Nodal values on a :class:`Grid` (solution, phase or fundamental solution)."""

    grid: Grid
    values: np.ndarray
    tag: str = "solution"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.node_shape:
            vals = vals.reshape(self.grid.node_shape)
        if not np.all(np.isfinite(vals)):
            raise ValueError("scalar field values must be finite")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: Grid, fn, tag: str = "solution") -> "ScalarField":
        return cls(grid, fn(grid.node_coords()), tag)

    def with_values(self, values, tag: str | None = None) -> "ScalarField":
        return ScalarField(self.grid, values, self.tag if tag is None else tag)

    def __mul__(self, c: float) -> "ScalarField":
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    def positive_part(self, tag: str = "phase") -> "ScalarField":
        return self.with_values(np.maximum(self.values, 0.0), tag)

    def negative_part(self, tag: str = "phase") -> "ScalarField":
        return self.with_values(np.maximum(-self.values, 0.0), tag)

    def interpolate(self, x: np.ndarray) -> np.ndarray:
        """Multilinear interpolation at arbitrary points inside the cube."""
        x = np.asarray(x, dtype=float)
        if np.any(np.abs(x) > 1.0 + 1e-12):
            raise ValueError("interpolation point outside [-1, 1]^n")
        cell, ref = locate(self.grid, x)
        return q1_values(self, cell, ref)


def locate(grid: Grid, x: np.ndarray):
    """Cell multi-index and reference coordinates in ``[-1, 1]^n`` of points."""
    t = (np.clip(x, -1.0, 1.0) + 1.0) / grid.h
    cell = np.clip(np.floor(t).astype(np.int64), 0, grid.m - 1)
    ref = 2.0 * (t - cell) - 1.0
    return cell, ref


def corner_values(u: ScalarField) -> np.ndarray:
    """Nodal values at the ``2^n`` corners of every cell, ``(2^n,) + cell_shape``."""
    g = u.grid
    out = np.empty((2 ** g.n,) + g.cell_shape)
    for a, v in enumerate(g.corner_offsets()):
        out[a] = u.values[tuple(slice(o, o + g.m) for o in v)]
    return out


def basis(ref: np.ndarray, n: int):
    """Q1 basis values ``(P, 2^n)`` and reference gradients ``(P, n, 2^n)``."""
    signs = 2.0 * np.array(list(itertools.product((0, 1), repeat=n))) - 1.0  # (2^n, n)
    fac = 0.5 * (1.0 + ref[:, None, :] * signs[None, :, :])  # (P, 2^n, n)
    phi = np.prod(fac, axis=-1)
    dphi = np.empty((ref.shape[0], n, 2 ** n))
    for d in range(n):
        others = np.prod(np.delete(fac, d, axis=-1), axis=-1)
        dphi[:, d, :] = 0.5 * signs[None, :, d] * others
    return phi, dphi


def _cell_corner_gather(u: ScalarField, cell: np.ndarray) -> np.ndarray:
    g = u.grid
    offs = g.corner_offsets()
    idx = cell[:, None, :] + offs[None, :, :]  # (P, 2^n, n)
    return u.values[tuple(idx[..., d] for d in range(g.n))]


def q1_values(u: ScalarField, cell: np.ndarray, ref: np.ndarray) -> np.ndarray:
    shape = ref.shape[:-1]
    cell = cell.reshape(-1, u.grid.n)
    ref = ref.reshape(-1, u.grid.n)
    phi, _ = basis(ref, u.grid.n)
    return np.sum(phi * _cell_corner_gather(u, cell), axis=-1).reshape(shape)


def q1_gradients(u: ScalarField, cell: np.ndarray, ref: np.ndarray) -> np.ndarray:
    _, dphi = basis(ref, u.grid.n)
    vals = _cell_corner_gather(u, cell)
    return np.einsum("pda,pa->pd", dphi, vals) * (2.0 / u.grid.h)


@dataclass(frozen=True)
class QuadRule:
    """Quadrature points over a region of the grid, grouped by host cell."""

    cell: np.ndarray  # (P, n) integer cell index
    ref: np.ndarray  # (P, n) reference coordinates
    x: np.ndarray  # (P, n) physical coordinates
    w: np.ndarray  # (P,)

    @property
    def size(self) -> int:
        return self.w.size


def _tensor_rule(n, pts_1d):
    pts = np.stack([g.ravel() for g in np.meshgrid(*([pts_1d] * n), indexing="ij")], axis=-1)
    return pts


def _inside_fraction(y: np.ndarray, s: float, r_out: float, r_in: float) -> np.ndarray:
    """Approximate share of the sub-cube of side ``s`` centred at ``y`` that lies
    in ``r_in <= |y| <= r_out``.

    Each sphere is treated as its tangent plane; the share is a linear ramp in
    the signed distance over the sub-cube's width along the normal.  This is
    exact at the midpoint crossing and removes the lattice-counting noise of a
    plain in/out test.
    """
    d = np.linalg.norm(y, axis=-1)
    nrm = np.abs(y) / np.where(d > 0, d, 1.0)[:, None]
    width = s * np.maximum(nrm.sum(axis=-1), 1.0)
    f = np.clip(0.5 + (r_out - d) / width, 0.0, 1.0)
    if r_in > 0:
        f = f * np.clip(0.5 + (d - r_in) / width, 0.0, 1.0)
    return f


def region_rule(grid: Grid, r_out: float, r_in: float = 0.0, centre=None,
                skip_origin_cells: bool = False) -> QuadRule:
    """Quadrature over the annulus ``r_in <= |x - centre| <= r_out``.

    Cells lying entirely inside the region use 2^n-point Gauss; cells cut by
    either sphere use midpoints of a ``4^n`` sub-cell split, each weighted by
    whether its midpoint falls inside.  ``skip_origin_cells`` drops the 2^n
    cells that touch the origin node.
    """
    n, h = grid.n, grid.h
    c0 = np.zeros(n) if centre is None else np.asarray(centre, dtype=float)
    cc = grid.cell_centres().reshape(-1, n)
    dist = np.linalg.norm(cc - c0, axis=-1)
    half_diag = 0.5 * h * np.sqrt(n)
    touching = (dist - half_diag <= r_out) & (dist + half_diag >= r_in)
    inside = (dist + half_diag <= r_out) & (dist - half_diag >= r_in)
    if skip_origin_cells:
        near = np.all(np.abs(cc) < h, axis=-1)
        touching &= ~near
        inside &= ~near
    cut = touching & ~inside
    all_cells = np.array(np.unravel_index(np.arange(grid.n_cells), grid.cell_shape)).T

    parts = []
    gauss = _tensor_rule(n, np.array([-GAUSS2, GAUSS2]))
    sub = _tensor_rule(n, np.array([-0.75, -0.25, 0.25, 0.75]))
    for mask, ref_pts, wt in ((inside, gauss, (h / 2) ** n), (cut, sub, (h / 4) ** n)):
        ids = np.flatnonzero(mask)
        if ids.size == 0:
            continue
        cells = np.repeat(all_cells[ids], len(ref_pts), axis=0)
        refs = np.tile(ref_pts, (ids.size, 1))
        x = cc[np.repeat(ids, len(ref_pts))] + 0.5 * h * refs
        w = np.full(len(x), wt)
        if mask is cut:
            w = w * _inside_fraction(x - c0, h / 4, r_out, r_in)
            keep = w > 0
            cells, refs, x, w = cells[keep], refs[keep], x[keep], w[keep]
        parts.append((cells, refs, x, w))
    if not parts:
        return QuadRule(np.zeros((0, n), np.int64), np.zeros((0, n)), np.zeros((0, n)), np.zeros(0))
    return QuadRule(*(np.concatenate(p) for p in zip(*parts)))


def integrate(rule: QuadRule, values: np.ndarray) -> float:
    return float(np.sum(values * rule.w))


def nodes_in_ball(grid: Grid, radius: float, centre=None, r_in: float = 0.0) -> np.ndarray:
    """Boolean node mask of ``r_in <= |x - centre| <= radius`` (closed)."""
    x = grid.node_coords()
    c0 = np.zeros(grid.n) if centre is None else np.asarray(centre, dtype=float)
    d = np.linalg.norm(x - c0, axis=-1)
    slack = 1e-12 * max(radius, 1.0)
    return (d <= radius + slack) & (d >= r_in - slack)


def sphere_points(n: int, radius: float, h: float, centre=None, per_cell: int = 8) -> np.ndarray:
    """Points on ``|x - centre| = radius`` inside the cube, about ``per_cell``
    per grid spacing along the sphere.

    The plane uses equal angles in multiples of 8 (axes and diagonals are hit
    exactly); space uses a Fibonacci lattice plus the six axis points.
    """
    c0 = np.zeros(n) if centre is None else np.asarray(centre, dtype=float)
    if n == 2:
        k = 8 * max(8, math.ceil(per_cell * 2 * math.pi * radius / h / 8))
        t = 2 * math.pi * np.arange(k) / k
        dirs = np.stack([np.cos(t), np.sin(t)], axis=-1)
    else:
        k = max(256, math.ceil(per_cell ** 2 * 4 * math.pi * (radius / h) ** 2))
        i = np.arange(k) + 0.5
        z = 1 - 2 * i / k
        phi = math.pi * (3 - math.sqrt(5)) * i
        s = np.sqrt(1 - z * z)
        dirs = np.concatenate([np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=-1),
                               np.eye(3), -np.eye(3)])
    x = c0 + radius * dirs
    return x[np.all(np.abs(x) <= 1.0, axis=-1)]
