"""Radius-indexed energies, monotonicity checks and exponent fits."""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np

from .coeff import MatrixField
from .mesh import ScalarField, nodes_in_ball, q1_gradients, q1_values, region_rule, sphere_points

DYADIC_WINDOW = tuple(2.0 ** -j for j in range(6, 0, -1))
OVERLAP_TOL = 1e-10


@dataclass(frozen=True)
class RadialTrace:
    radii: tuple
    values: tuple
    label: str = ""

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if r.shape != v.shape or r.ndim != 1:
            raise ValueError("radii and values must be 1-D and of equal length")
        if np.any(np.diff(r) <= 0):
            raise ValueError("radii must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("trace values must be finite")
        object.__setattr__(self, "radii", tuple(float(x) for x in r))
        object.__setattr__(self, "values", tuple(float(x) for x in v))

    def as_arrays(self):
        return np.asarray(self.radii), np.asarray(self.values)

    def csv_rows(self):
        return [f"{r:.17g},{v:.17g},{self.label}" for r, v in zip(self.radii, self.values)]


@dataclass(frozen=True)
class MonotonicityReport:
    is_monotone: bool
    worst_violation: float
    pair: tuple


@dataclass(frozen=True)
class ExponentReport:
    exponent: float
    residual: float
    r_min: float
    r_max: float
    normalizer: tuple = dc_field(default=())

    def csv_row(self) -> str:
        return f"{self.exponent:.17g},{self.residual:.17g},{self.r_min:.17g},{self.r_max:.17g}"


class PhaseOverlapError(ValueError):
    pass


# -- energies -------------------------------------------------------------------

def energy_density(u: ScalarField, field: MatrixField, rule) -> np.ndarray:
    grad = q1_gradients(u, rule.cell, rule.ref)
    a = field.evaluate(rule.x)
    return np.einsum("pi,pij,pj->p", grad, a, grad)


def dirichlet_energy_ball(u: ScalarField, field: MatrixField, r: float, centre=None,
                          r_in: float = 0.0, origin_energy: float | None = None) -> float:
    """``int_{B_r(centre) \\ B_{r_in}} A grad u . grad u``.

    For exact data singular at the origin, pass ``origin_energy``: the 2^n
    cells touching the origin are then skipped and this value (their exact
    energy) is added instead.
    """
    if not 0 < r <= 1.0 + 1e-12 and centre is None:
        raise ValueError(f"radius must lie in (0, 1], got {r}")
    skip = origin_energy is not None
    rule = region_rule(u.grid, r, r_in, centre, skip_origin_cells=skip)
    total = float(np.sum(rule.w * energy_density(u, field, rule)))
    return total + origin_energy if skip else total


def energy_trace(u: ScalarField, field: MatrixField, radii: Sequence[float], label="energy") -> RadialTrace:
    return RadialTrace(tuple(radii), tuple(dirichlet_energy_ball(u, field, r) for r in radii), label)


def acf_exponent(m: int, lam: float, upper: float) -> float:
    """Multiphase exponent ``(m/2) sqrt(lam/L)``."""
    return 0.5 * m * math.sqrt(lam / upper)


def check_phases(phases: Sequence[ScalarField], tol: float = OVERLAP_TOL) -> None:
    sups = [float(np.max(p.values)) for p in phases]
    for i, p in enumerate(phases):
        if np.min(p.values) < -tol * max(sups[i], 1.0):
            raise PhaseOverlapError(f"phase {i + 1} takes negative values")
    for i in range(len(phases)):
        for j in range(i + 1, len(phases)):
            prod = phases[i].values * phases[j].values
            bad = prod >= tol * sups[i] * sups[j]
            if sups[i] * sups[j] > 0 and bad.any():
                nodes = [tuple(int(k) for k in ix) for ix in np.argwhere(bad)[:5]]
                raise PhaseOverlapError(
                    f"phases {i + 1} and {j + 1} overlap at nodes {nodes} (positivity sets must be disjoint)")


def acf_product(phases: Sequence[ScalarField], field: MatrixField, radii: Sequence[float],
                check: bool = True, origin_energies: Sequence[float] | None = None) -> RadialTrace:
    """``Phi(r) = prod_i r^{-2 k*_m} int_{B_r} A grad u_i . grad u_i``.

    ``origin_energies`` (one per phase) replaces the quadrature on the cells
    touching the origin, see :func:`dirichlet_energy_ball`.
    """
    if check:
        check_phases(phases)
    k = acf_exponent(len(phases), field.lam, field.upper)
    tails = list(origin_energies) if origin_energies is not None else [None] * len(phases)
    vals = []
    for r in radii:
        prod = 1.0
        for p, tail in zip(phases, tails):
            prod *= dirichlet_energy_ball(p, field, r, origin_energy=tail) / r ** (2 * k)
        vals.append(prod)
    return RadialTrace(tuple(radii), tuple(vals), f"phi_m{len(phases)}")


def weighted_energy_parts(u: ScalarField, field: MatrixField, gamma, r: float):
    """Gamma-weighted energy of ``B_r`` split into (shell, core) contributions.

    The shell ``c <= |x| <= r`` (``c = 8h``) integrates the computed ``Gamma``.
    Inside the core the point-load values are not trusted; there ``Gamma`` is
    replaced by ``C |x|^{2-n}`` with ``C`` the mean of ``Gamma |x|^{n-2}`` on
    the core sphere.
    """
    g = u.grid
    if g.n != 3:
        raise ValueError("weighted energy is defined for n = 3")
    gfield = getattr(gamma, "field", gamma)
    core = 8 * g.h
    if r < core - 1e-12:
        raise ValueError(f"radius {r} is inside the excluded core {core}")
    shell = region_rule(g, r, core)
    gam = q1_values(gfield, shell.cell, shell.ref)
    outer = float(np.sum(shell.w * gam * energy_density(u, field, shell)))

    sphere = region_rule(g, core + 0.5 * g.h, core - 0.5 * g.h)
    d = np.linalg.norm(sphere.x, axis=-1)
    scale = float(np.sum(sphere.w * q1_values(gfield, sphere.cell, sphere.ref) * d) / np.sum(sphere.w))
    inner = region_rule(g, core)
    d_in = np.linalg.norm(inner.x, axis=-1)
    core_part = float(np.sum(inner.w * scale / d_in * energy_density(u, field, inner)))
    return outer, core_part


def weighted_energy(u: ScalarField, field: MatrixField, gamma, r: float) -> float:
    outer, core_part = weighted_energy_parts(u, field, gamma, r)
    return outer + core_part


def weighted_trace(u, field, gamma, radii, label="weighted") -> RadialTrace:
    return RadialTrace(tuple(radii), tuple(weighted_energy(u, field, gamma, r) for r in radii), label)


def decay_mu(lam: float, upper: float, n: int) -> float:
    """``sqrt((lam/L)(n-1)) - (n-2)/2``."""
    return math.sqrt(lam / upper * (n - 1)) - 0.5 * (n - 2)


def decay_trace(u: ScalarField, field: MatrixField, radii: Sequence[float], mu: float | None = None) -> RadialTrace:
    """``r -> r^{-(n-2+2 mu)} int_{B_r} A grad u . grad u``."""
    n = u.grid.n
    if n != 3:
        raise ValueError("decay trace is defined for n = 3")
    if mu is None:
        mu = decay_mu(field.lam, field.upper, n)
    vals = [dirichlet_energy_ball(u, field, r) / r ** (n - 2 + 2 * mu) for r in radii]
    return RadialTrace(tuple(radii), tuple(vals), "decay")


# -- monotonicity and exponents ----------------------------------------------------

def check_monotone(trace: RadialTrace, tol: float = 0.0) -> MonotonicityReport:
    _, v = trace.as_arrays()
    if v.size < 2:
        raise ValueError("need at least two radii")
    scale = float(np.max(np.abs(v)))
    diffs = np.diff(v) / scale if scale > 0 else np.zeros(v.size - 1)
    j = int(np.argmin(diffs))
    worst = min(0.0, float(diffs[j]))
    pair = (trace.radii[j], trace.radii[j + 1]) if worst < 0 else ()
    return MonotonicityReport(worst >= -tol, worst, pair)


def loglog_fit(radii, values, label="values"):
    r = np.asarray(radii, dtype=float)
    v = np.asarray(values, dtype=float)
    if r.size < 4:
        raise ValueError("exponent fits need at least 4 radii")
    if np.any(v <= 0):
        raise ValueError(f"{label} must be positive on the fit window")
    x, y = np.log(r), np.log(v)
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    return float(slope), float(np.sqrt(np.mean(resid ** 2)))


def holder_from_decay(trace: RadialTrace) -> ExponentReport:
    """Exponent ``alpha`` with ``value ~ r^{2 alpha}`` (half the log-log slope)."""
    r, v = trace.as_arrays()
    slope, res = loglog_fit(r, v, "decay values")
    return ExponentReport(slope / 2.0, res, float(r[0]), float(r[-1]))


def holder_from_hole_filling(t: float) -> float:
    """``alpha = -log2(t) / 2`` for a hole-filling ratio ``t`` in (0, 1)."""
    if not 0 < t < 1:
        raise ValueError("hole-filling ratio must lie in (0, 1)")
    return -0.5 * math.log2(t)


def resolved_window(grid, radii: Sequence[float] = DYADIC_WINDOW, min_cells: float = 2.0) -> tuple:
    """Drop radii below ``min_cells`` grid spacings; fits need four survivors."""
    keep = tuple(r for r in radii if r >= min_cells * grid.h - 1e-12)
    if len(keep) < 4:
        raise ValueError(f"only {len(keep)} radii resolve at h = {grid.h:g}; exponent fits need 4")
    return keep


def ball_values(u: ScalarField, r: float, centre=None) -> np.ndarray:
    """Values of the Q1 interpolant seen on ``B_r``: nodes inside plus a dense
    sampling of the bounding sphere.

    Nodes alone under-sample small balls (``B_h`` holds only the axis
    neighbours of the centre); a multilinear function on a cell has no
    interior extremum, so its extremes over the ball lie at nodes or on the
    sphere.
    """
    mask = nodes_in_ball(u.grid, r, centre)
    if not mask.any():
        raise ValueError(f"no grid nodes in B_{r}")
    x = sphere_points(u.grid.n, r, u.grid.h, centre)
    return np.concatenate([u.values[mask], u.interpolate(x)])


def oscillation_trace(u: ScalarField, x0=None, radii: Sequence[float] = DYADIC_WINDOW) -> RadialTrace:
    vals = []
    for r in radii:
        sel = ball_values(u, r, x0)
        vals.append(float(sel.max() - sel.min()))
    return RadialTrace(tuple(radii), tuple(vals), "oscillation")


def holder_exponent(u: ScalarField, x0=None, radii: Sequence[float] = DYADIC_WINDOW) -> ExponentReport:
    tr = oscillation_trace(u, x0, radii)
    r, v = tr.as_arrays()
    slope, res = loglog_fit(r, v, "oscillations")
    return ExponentReport(slope, res, float(r[0]), float(r[-1]))


def tail_normalizer(radii, supnorms, gamma: float) -> np.ndarray:
    """``theta(r_j) = max_{rho_i >= r_j} rho_i^{-gamma} sup_{B_rho_i} |u|``."""
    r = np.asarray(radii, dtype=float)
    s = np.asarray(supnorms, dtype=float)
    if r.size == 0:
        raise ValueError("empty tail")
    scaled = s / r ** gamma
    return np.maximum.accumulate(scaled[::-1])[::-1]


def growth_exponent(trace: RadialTrace, gamma: float | None = None) -> ExponentReport:
    """Slope of ``log sup|u|`` against ``log R``, plus the tail normalizer."""
    r, v = trace.as_arrays()
    slope, res = loglog_fit(r, v, "sup-norms")
    theta = tail_normalizer(r, v, slope if gamma is None else gamma)
    return ExponentReport(slope, res, float(r[0]), float(r[-1]), tuple(float(t) for t in theta))


def supnorm_trace(u: ScalarField, radii: Sequence[float], centre=None, subtract_centre: bool = False) -> RadialTrace:
    base = 0.0
    if subtract_centre:
        base = float(u.interpolate(np.zeros((1, u.grid.n)) if centre is None else np.asarray(centre)[None])[0])
    vals = []
    for r in radii:
        vals.append(float(np.max(np.abs(ball_values(u, r, centre) - base))))
    return RadialTrace(tuple(radii), tuple(vals), "supnorm")
