"""Blow-up/blow-down rescalings and laminate G-convergence experiments."""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from . import coeff
from .coeff import MatrixField, SymmetricTensor
from .functionals import ExponentReport, dirichlet_energy_ball, growth_exponent, supnorm_trace, tail_normalizer
from .mesh import GAUSS2, Grid, ScalarField, basis
from .solver import l2_error, solve_dirichlet


class DegenerateSpecError(ValueError):
    pass


@dataclass(frozen=True)
class BlowupSpec:
    centre: tuple
    radius: float
    alpha: float
    normalization: float  # D(x_j, u, r_j)^{1/2}

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("blow-up radius must be positive")
        if not self.normalization > 0:
            raise DegenerateSpecError("normalization is zero: u has no energy on the ball")


def scaled_energy(u: ScalarField, field: MatrixField, centre, radius: float, alpha: float,
                  origin_energy: float | None = None) -> float:
    """``D(x, u, r) = r^{-(n-2+2 alpha)} int_{B_r(x)} A grad u . grad u``."""
    n = u.grid.n
    e = dirichlet_energy_ball(u, field, radius, centre=centre, origin_energy=origin_energy)
    return e / radius ** (n - 2 + 2 * alpha)


def blowup_spec(u: ScalarField, field: MatrixField, centre, radius: float, alpha: float,
                origin_energy: float | None = None) -> BlowupSpec:
    d = scaled_energy(u, field, centre, radius, alpha, origin_energy)
    if not d > 0:
        raise DegenerateSpecError("normalization is zero: u has no energy on the ball")
    return BlowupSpec(tuple(float(c) for c in centre), float(radius), float(alpha), math.sqrt(d))


def blowup_rescale(u: ScalarField, spec: BlowupSpec, target: Grid) -> ScalarField:
    """``(u(x_j + r_j x) - u(x_j)) / (r_j^alpha D^{1/2})`` on the target grid."""
    c = np.asarray(spec.centre, dtype=float)
    if np.any(np.abs(c) + spec.radius > 1.0 + 1e-12):
        raise ValueError("blow-up image leaves the source domain")
    x = c + spec.radius * target.node_coords()
    base = float(u.interpolate(c[None, :])[0])
    vals = (u.interpolate(x) - base) / (spec.radius ** spec.alpha * spec.normalization)
    return ScalarField(target, vals, u.tag)


def blowdown_normalizer(radii: Sequence[float], supnorms: Sequence[float], gamma: float) -> np.ndarray:
    """Running tail supremum ``theta(r) = sup_{rho >= r} rho^{-gamma} sup_{B_rho}|u|``."""
    return tail_normalizer(radii, supnorms, gamma)


# -- laminates -------------------------------------------------------------------

def homogenize_laminate(lam: float, upper: float, axis: int = 0, n: int = 2) -> SymmetricTensor:
    """G-limit of the two-phase laminate: harmonic mean across the layers,
    arithmetic mean along them."""
    if not 0 < lam <= upper:
        raise ValueError("need 0 < lambda <= L")
    diag = np.full(n, 0.5 * (lam + upper))
    diag[axis] = 2 * lam * upper / (lam + upper)
    return SymmetricTensor.from_matrix(np.diag(diag))


def cell_problem_tensor(field: MatrixField, period: float, m: int = 64) -> np.ndarray:
    """Effective tensor from the periodic corrector problems on ``[0, period]^n``.

    Q1 elements, ``m`` cells per side, one pinned node.  Works for any
    periodic field; used as the independent check of the laminate formula.
    """
    n = field.n
    h = period / m
    verts = np.array(list(itertools.product((0, 1), repeat=n)))
    gauss = np.array(list(itertools.product((-GAUSS2, GAUSS2), repeat=n)))
    phi_q, dphi_q = basis(gauss, n)
    dphi_q = dphi_q * (2.0 / h)
    wq = (h / 2) ** n
    cells = np.array(list(itertools.product(range(m), repeat=n)))
    centres = (cells + 0.5) * h
    strides = np.array([m ** (n - 1 - d) for d in range(n)])
    nodes = ((cells[:, None, :] + verts[None, :, :]) % m) @ strides  # (C, 2^n)

    a_q = np.stack([field.evaluate(centres + 0.5 * h * g) for g in gauss])  # (Q, C, n, n)
    kloc = wq * np.einsum("qia,qcij,qjb->cab", dphi_q, a_q, dphi_q)
    N = m ** n
    rows = np.repeat(nodes, 2 ** n, axis=1).ravel()
    cols = np.tile(nodes, (1, 2 ** n)).ravel()
    K = sp.csr_matrix((kloc.ravel(), (rows, cols)), shape=(N, N))
    keep = np.arange(1, N)
    Kr = K[keep][:, keep].tocsc()

    eff = np.zeros((n, n))
    vol = period ** n
    for j in range(n):
        # load b_i = int A e_j . grad phi_i
        bl = wq * np.einsum("qcd,qda->ca", a_q[..., :, j], dphi_q)
        b = np.bincount(nodes.ravel(), weights=bl.ravel(), minlength=N)
        chi = np.zeros(N)
        chi[keep] = spsolve(Kr, -b[keep])
        grad = np.einsum("qda,ca->qcd", dphi_q, chi[nodes])
        flux = np.einsum("qcij,qcj->qci", a_q, grad) + a_q[..., :, j]
        eff[:, j] = wq * flux.sum(axis=(0, 1)) / vol
    return 0.5 * (eff + eff.T)


@dataclass(frozen=True)
class HomogenizationReport:
    eps: tuple
    distances: tuple
    tensor: SymmetricTensor

    def csv_rows(self):
        return [f"{e:.17g},{d:.17g}" for e, d in zip(self.eps, self.distances)]


def gconv_experiment(lam: float, upper: float, eps_list: Sequence[float], g: Callable, grid: Grid,
                     axis: int = 0, tol: float = 1e-10, workers: int = 1) -> HomogenizationReport:
    """L^2 distance between laminate solutions and the homogenised solution."""
    for e in eps_list:
        if e / grid.h < 8 - 1e-9:
            raise ValueError(f"period {e} under-resolved: need >= 8 cells per period (h = {grid.h})")
    tensor = homogenize_laminate(lam, upper, axis, grid.n)
    u_eff, _ = solve_dirichlet(coeff.constant(tensor.matrix), grid, g, tol=tol)

    def one(e):
        u, _ = solve_dirichlet(coeff.laminate(lam, upper, e, axis, grid.n), grid, g, tol=tol)
        return l2_error(u, u_eff)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            dists = list(pool.map(one, eps_list))
    else:
        dists = [one(e) for e in eps_list]
    return HomogenizationReport(tuple(float(e) for e in eps_list), tuple(dists), tensor)


# -- Liouville probes ---------------------------------------------------------------

@dataclass(frozen=True)
class ProbeReport:
    report: ExponentReport
    verdict: str
    radii: tuple
    supnorms: tuple
    theta: tuple

    def csv_rows(self):
        return [f"{r:.17g},{s:.17g},{t:.17g}" for r, s, t in zip(self.radii, self.supnorms, self.theta)]


PROBE_WINDOW = tuple(2.0 ** -j for j in range(5, 0, -1))


def liouville_probe(field: MatrixField, g: Callable, grid: Grid, radii: Sequence[float] = PROBE_WINDOW,
                    tol: float = 1e-10, min_growth: float = 0.05) -> ProbeReport:
    """Empirical least-growth exponent of a scale-invariant field.

    One Dirichlet solve on the cube with data ``g``; for a zero-homogeneous
    field each ball ``B_rho`` rescaled to ``B_1`` carries the same field, so
    the sup-norms of ``u - u(0)`` over the dyadic balls are a sequence of
    blow-downs of one entire-solution candidate.  The verdict is empirical.
    """
    periodic = field.kind in ("laminate", "checkerboard")
    if not (field.is_zero_homogeneous or periodic):
        raise ValueError(f"field kind {field.kind!r} is not rescalable")
    if field.is_zero_homogeneous:
        probe = np.random.default_rng(0).uniform(-1, 1, (64, field.n))
        for rho in radii:
            view = coeff.rescale_field(field, np.zeros(field.n), rho)
            if not np.allclose(view.evaluate(probe), field.evaluate(probe), rtol=0, atol=1e-12):
                raise ValueError("field is not invariant under the dyadic rescalings")
    u, _ = solve_dirichlet(field, grid, g, tol=tol)
    trace = supnorm_trace(u, radii, subtract_centre=True)
    rep = growth_exponent(trace)
    verdict = "nontrivial-growth" if rep.exponent > min_growth and rep.residual < 0.05 else "degenerate"
    return ProbeReport(rep, verdict, trace.radii, trace.values, rep.normalizer)
