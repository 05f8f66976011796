"""Discrete fundamental solutions (point-load problems) in three dimensions."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coeff import MatrixField, unpack
from .mesh import Grid, ScalarField, nodes_in_ball, q1_gradients, region_rule
from .solver import System, assemble_system, solve_system

CORE_CELLS = 8
# nodal probes only need to clear the point-load cluster itself
PROBE_CELLS = 4


@dataclass(frozen=True, eq=False)
class FundamentalSolutionField:
    field: ScalarField
    load_index: tuple
    closure: str
    min_on_annulus: float
    flagged: bool

    @property
    def grid(self) -> Grid:
        return self.field.grid

    @property
    def core_radius(self) -> float:
        return CORE_CELLS * self.grid.h

    @property
    def values(self) -> np.ndarray:
        return self.field.values


@dataclass(frozen=True)
class BoundsReport:
    c1: float
    c2: float
    r_in: float
    r_out: float
    m: int

    @property
    def ratio(self) -> float:
        return self.c2 / self.c1

    def csv_row(self) -> str:
        return f"{self.c1:.17g},{self.c2:.17g},{self.r_in:.17g},{self.r_out:.17g},{self.m}"


def constant_kernel(tensor: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Free-space fundamental solution of ``-div(A0 grad)`` for constant ``A0`` (n = 3)."""
    inv = np.linalg.inv(tensor)
    q = np.einsum("...i,ij,...j->...", x, inv, x)
    with np.errstate(divide="ignore"):
        return 1.0 / (4.0 * math.pi * math.sqrt(np.linalg.det(tensor)) * np.sqrt(q))


def reference_tensor(field: MatrixField, grid: Grid) -> np.ndarray:
    """Cube average of ``A``; exact for constant fields."""
    if field.kind == "constant":
        return unpack(np.asarray(field.params["tensor"]), field.n)
    return field.evaluate(grid.cell_centres()).reshape(-1, field.n, field.n).mean(axis=0)


def compute_fundamental(field: MatrixField, grid: Grid, load: float = 1.0, closure: str = "zero",
                        tol: float = 1e-10, system: System | None = None,
                        workers: int = 1) -> FundamentalSolutionField:
    """Solve ``K G = load * e_centre`` on the cube.

    ``closure="zero"`` gives the Green function of the cube (zero Dirichlet
    data).  ``closure="free-space"`` instead prescribes the constant-coefficient
    kernel of :func:`reference_tensor` on the cube boundary, which removes the
    truncation deficit exactly when the field is constant.
    """
    if grid.n != 3:
        raise ValueError("fundamental solutions are computed for n = 3")
    if grid.m < 48:
        raise ValueError("need m >= 48 so the core 8h stays well inside the probe annulus")
    system = system or assemble_system(field, grid, workers=workers)
    centre = grid.centre_index()
    rhs = np.zeros(grid.node_shape)
    rhs[centre] = load
    if closure == "zero":
        g = np.zeros(grid.node_shape)
    elif closure == "free-space":
        x = grid.node_coords()
        g = np.zeros(grid.node_shape)
        bmask = grid.boundary_mask()
        g[bmask] = load * constant_kernel(reference_tensor(field, grid), x[bmask])
    else:
        raise ValueError(f"unknown closure {closure!r}")
    values, _ = solve_system(system, g, rhs, tol=tol)
    h = grid.h
    ann = nodes_in_ball(grid, 0.5, r_in=CORE_CELLS * h)
    low = float(values[ann].min())
    return FundamentalSolutionField(ScalarField(grid, values, "fundamental"), centre, closure,
                                    low, low < -1e-8)


def bounds_ratio(gamma: FundamentalSolutionField, annulus=(0.15, 0.35)) -> BoundsReport:
    """Empirical ``C1 = min G |x|^{n-2}`` and ``C2 = max`` over annulus nodes."""
    r_in, r_out = annulus
    g = gamma.grid
    if not (PROBE_CELLS * g.h - 1e-12 <= r_in < r_out <= 0.5):
        raise ValueError(f"annulus must satisfy 4h <= r_in < r_out <= 1/2, got {annulus}")
    mask = nodes_in_ball(g, r_out, r_in=r_in)
    if not mask.any():
        raise ValueError("empty annulus")
    d = np.linalg.norm(g.node_coords()[mask], axis=-1)
    scaled = gamma.values[mask] * d ** (g.n - 2)
    return BoundsReport(float(scaled.min()), float(scaled.max()), r_in, r_out, g.m)


def annulus_gradient_energy(gamma: FundamentalSolutionField, r: float) -> float:
    """``int_{B_{3r/2} \\ B_r} |grad G|^2``."""
    if r < gamma.core_radius - 1e-12 or 1.5 * r > 0.5 + 1e-12:
        raise ValueError(f"need 8h <= r and 3r/2 <= 1/2, got r={r}")
    rule = region_rule(gamma.grid, 1.5 * r, r)
    grad = q1_gradients(gamma.field, rule.cell, rule.ref)
    return float(np.sum(rule.w * np.sum(grad * grad, axis=-1)))
