"""Q1 finite elements for ``div(A grad u) = 0`` on ``[-1, 1]^n``.

Assembly is stencil based: the grid is structured, so the global matrix is
stored as ``3^n`` coefficient arrays (one per neighbour offset) and turned
into a CSR matrix with a fixed number of slots per row.  Only the offsets
with positive flat index are accumulated; their mirrors are copies, so the
matrix is symmetric bit for bit.
"""
from __future__ import annotations

import itertools
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .coeff import MatrixField, n_components
from .mesh import GAUSS2, Grid, ScalarField, basis, corner_values, nodes_in_ball, region_rule


class AssemblyError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = history


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    residual: float
    assembly_ms: float
    solve_ms: float

    def csv_row(self) -> str:
        return f"{self.iterations},{self.residual:.17g},{self.assembly_ms:.3f},{self.solve_ms:.3f}"


@dataclass(frozen=True, eq=False)
class System:
    grid: Grid
    matrix: sp.csr_matrix
    assembly_ms: float = 0.0
    offsets: tuple = dc_field(default=(), repr=False)


def _gauss_points(n):
    return np.array(list(itertools.product((-GAUSS2, GAUSS2), repeat=n)))


def _pair_table(grid: Grid):
    """Unordered vertex pairs oriented so the neighbour offset is non-negative.

    Returns a list of ``(a, b, src_offset, stencil_offset)`` where the entry
    ``K[p, p + stencil_offset]`` with ``p = cell + src_offset`` receives the
    local coefficient ``K_ab``.
    """
    n = grid.n
    verts = grid.corner_offsets()
    strides = np.array([(grid.m + 1) ** (n - 1 - d) for d in range(n)])
    table = []
    for a in range(len(verts)):
        for b in range(a, len(verts)):
            d = verts[b] - verts[a]
            if int(d @ strides) >= 0:
                table.append((a, b, tuple(verts[a]), tuple(d)))
            else:
                table.append((a, b, tuple(verts[b]), tuple(-d)))
    return table


def _projection_matrices(grid: Grid, pairs):
    """``M[q]`` mapping packed tensor components to local pair entries."""
    n, h = grid.n, grid.h
    iu, ju = np.triu_indices(n)
    mats = []
    _, dphi = basis(_gauss_points(n), n)
    dphi = dphi * (2.0 / h)
    wq = (h / 2) ** n
    for q in range(dphi.shape[0]):
        g = dphi[q]  # (n, 2^n)
        mq = np.empty((len(iu), len(pairs)))
        for c, (i, j) in enumerate(zip(iu, ju)):
            for k, (a, b, _, _) in enumerate(pairs):
                if i == j:
                    mq[c, k] = g[i, a] * g[i, b]
                else:
                    mq[c, k] = g[i, a] * g[j, b] + g[j, a] * g[i, b]
        mats.append(wq * mq)
    return mats


def _check_positive(comps, n, cell_index):
    a11 = comps[..., 0]
    if n == 2:
        minors = [a11, a11 * comps[..., 2] - comps[..., 1] ** 2]
    else:
        a12, a13, a22, a23, a33 = (comps[..., k] for k in range(1, 6))
        det2 = a11 * a22 - a12 ** 2
        det3 = a11 * (a22 * a33 - a23 ** 2) - a12 * (a12 * a33 - a23 * a13) + a13 * (a12 * a23 - a22 * a13)
        minors = [a11, det2, det3]
    bad = np.zeros(a11.shape, dtype=bool)
    for mnr in minors:
        bad |= ~(mnr > 0)
    if bad.any():
        first = np.argwhere(bad)[0]
        cell = cell_index(first)
        raise AssemblyError(f"coefficient tensor not positive definite in cell {cell}")


def _chunk_local(field, grid, pairs, mats, lo, hi):
    """Local pair coefficients for cells with first index in ``[lo, hi)``."""
    n, h = grid.n, grid.h
    centres_1d = -1.0 + h * (np.arange(grid.m) + 0.5)
    axes = [centres_1d[lo:hi]] + [centres_1d] * (n - 1)
    cc = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    out = None
    for q, gp in enumerate(_gauss_points(n)):
        comps = field.components(cc + 0.5 * h * gp)
        _check_positive(comps, n, lambda idx: (int(idx[0]) + lo,) + tuple(int(i) for i in idx[1:]))
        contrib = comps.reshape(-1, comps.shape[-1]) @ mats[q]
        out = contrib if out is None else out + contrib
    return out.reshape(cc.shape[:-1] + (len(pairs),))


def assemble_system(field: MatrixField, grid: Grid, workers: int = 1, chunk_cells: int = 200_000) -> System:
    """Q1 stiffness matrix ``K_ij = int A grad(phi_i) . grad(phi_j)``."""
    if field.n != grid.n:
        raise ValueError(f"field dimension {field.n} does not match grid dimension {grid.n}")
    t0 = time.perf_counter()
    n, m = grid.n, grid.m
    pairs = _pair_table(grid)
    mats = _projection_matrices(grid, pairs)
    offsets = sorted({p[3] for p in pairs})
    stencil = {d: np.zeros(grid.node_shape) for d in offsets}

    slab = max(1, chunk_cells // m ** (n - 1))
    bounds = [(lo, min(lo + slab, m)) for lo in range(0, m, slab)]

    def work(b):
        return _chunk_local(field, grid, pairs, mats, *b)

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(workers) as pool:
            locals_ = pool.map(work, bounds)
            _accumulate(stencil, pairs, bounds, locals_, m)
    else:
        _accumulate(stencil, pairs, bounds, map(work, bounds), m)

    matrix = _stencil_to_csr(grid, stencil)
    return System(grid, matrix, 1e3 * (time.perf_counter() - t0), tuple(offsets))


def _accumulate(stencil, pairs, bounds, locals_, m):
    # fixed chunk order and pair order: result independent of worker count
    for (lo, hi), loc in zip(bounds, locals_):
        for k, (_, _, src, d) in enumerate(pairs):
            sl = (slice(lo + src[0], hi + src[0]),) + tuple(slice(s, s + m) for s in src[1:])
            stencil[d][sl] += loc[..., k]


def _stencil_to_csr(grid: Grid, stencil) -> sp.csr_matrix:
    n = grid.n
    shape = grid.node_shape
    N = grid.n_nodes
    strides = np.array([(grid.m + 1) ** (n - 1 - d) for d in range(n)])
    full = []
    for d in itertools.product((-1, 0, 1), repeat=n):
        d = tuple(d)
        flat = int(np.array(d) @ strides)
        if flat >= 0:
            vals = stencil[d]
        else:
            # K[p, p+d] = K[p+d, p] read from the mirrored offset
            src = stencil[tuple(-x for x in d)]
            vals = np.zeros(shape)
            dst = tuple(slice(max(0, -x), shape[0] - max(0, x)) for x in d)
            srcs = tuple(slice(max(0, x), shape[0] - max(0, -x)) for x in d)
            vals[dst] = src[srcs]
        full.append((flat, vals.ravel()))
    k = len(full)
    data = np.empty((N, k))
    cols = np.empty((N, k), dtype=np.int64)
    rows = np.arange(N)
    for j, (flat, vals) in enumerate(full):
        data[:, j] = vals
        cols[:, j] = np.clip(rows + flat, 0, N - 1)
    index_dtype = np.int32 if N * k < 2 ** 31 else np.int64
    indptr = np.arange(0, N * k + 1, k, dtype=index_dtype)
    return sp.csr_matrix((data.ravel(), cols.ravel().astype(index_dtype), indptr), shape=(N, N))


def _dot(a, b):
    # numpy pairwise summation: fixed reduction order for a given length
    return float(np.add.reduce(a * b))


def pcg(matvec: Callable, rhs: np.ndarray, diag: np.ndarray, tol: float = 1e-10,
        maxiter: int | None = None, x0: np.ndarray | None = None):
    """Jacobi-preconditioned conjugate gradients.

    Returns ``(x, iterations, relative_residual)``; raises
    :class:`ConvergenceError` (carrying the residual history) on stall.
    """
    if maxiter is None:
        maxiter = int(50 * math.sqrt(rhs.size))
    x = np.zeros_like(rhs) if x0 is None else x0.copy()
    r = rhs - matvec(x) if x0 is not None else rhs.copy()
    bnorm = math.sqrt(_dot(rhs, rhs))
    if bnorm == 0.0:
        return np.zeros_like(rhs), 0, 0.0
    inv_d = 1.0 / diag
    z = inv_d * r
    p = z.copy()
    rz = _dot(r, z)
    history = [math.sqrt(_dot(r, r)) / bnorm]
    for it in range(1, maxiter + 1):
        q = matvec(p)
        pq = _dot(p, q)
        if not pq > 0:
            # exact solution reached, or round-off below any further progress
            if history[-1] == 0.0:
                return x, it - 1, 0.0
            raise ConvergenceError(f"CG breakdown at iteration {it} before reaching {tol:g} "
                                   f"(last {history[-1]:.3e})", history)
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        res = math.sqrt(_dot(r, r)) / bnorm
        history.append(res)
        if res <= tol:
            return x, it, res
        z = inv_d * r
        rz_new = _dot(r, z)
        p *= rz_new / rz
        p += z
        rz = rz_new
    raise ConvergenceError(f"CG did not reach {tol:g} in {maxiter} iterations (last {history[-1]:.3e})", history)


@dataclass(frozen=True)
class BoundaryData:
    """Dirichlet trace ``g`` on the cube boundary."""

    fn: Callable
    kind: str = "analytic-expression"

    @classmethod
    def constant(cls, value: float) -> "BoundaryData":
        return cls(lambda x: np.full(x.shape[:-1], float(value)), "constant")

    @classmethod
    def from_exact(cls, fn: Callable) -> "BoundaryData":
        return cls(fn, "from-exact-solution")

    def __call__(self, x):
        return np.asarray(self.fn(x), dtype=float)


def _eliminated(system: System, interior: np.ndarray) -> sp.csr_matrix:
    """Copy of K with boundary rows/columns replaced by the identity."""
    K = system.matrix
    data = K.data.reshape(K.shape[0], -1).copy()
    cols = K.indices.reshape(K.shape[0], -1)
    centre = data.shape[1] // 2
    data *= interior[cols]
    data[~interior] = 0.0
    data[~interior, centre] = 1.0
    return sp.csr_matrix((data.ravel(), K.indices, K.indptr), shape=K.shape)


def solve_system(system: System, g_values: np.ndarray, load: np.ndarray | None = None,
                 tol: float = 1e-10, maxiter: int | None = None):
    """Solve ``K u = load`` with ``u = g`` on boundary nodes."""
    grid = system.grid
    bmask = grid.boundary_mask().ravel()
    interior = ~bmask
    g_ext = np.where(bmask, g_values.ravel(), 0.0)
    rhs = -(system.matrix @ g_ext)
    if load is not None:
        rhs += load.ravel()
    rhs[bmask] = 0.0
    Kt = _eliminated(system, interior)
    diag = Kt.diagonal()
    t0 = time.perf_counter()
    w, iters, res = pcg(Kt.dot, rhs, diag, tol=tol, maxiter=maxiter)
    solve_ms = 1e3 * (time.perf_counter() - t0)
    u = np.where(bmask, g_ext, w)
    return u.reshape(grid.node_shape), SolveReport(iters, res, system.assembly_ms, solve_ms)


def solve_dirichlet(field: MatrixField, grid: Grid, g: BoundaryData | Callable, tol: float = 1e-10,
                    workers: int = 1, system: System | None = None):
    """Discrete Dirichlet solution of ``div(A grad u) = 0`` with trace ``g``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    system = system or assemble_system(field, grid, workers=workers)
    gvals = np.asarray(g(grid.node_coords()), dtype=float)
    u, report = solve_system(system, gvals, tol=tol)
    return ScalarField(grid, u, "solution"), report


# -- closed-form oracle solutions -----------------------------------------------

def meyers_exponent(lam: float, upper: float, n: int = 2) -> float:
    """Homogeneity k of the Meyers solution: root of ``L k (k + n - 2) = lam (n - 1)``."""
    if not 0 < lam <= upper:
        raise ValueError("need 0 < lambda <= L")
    if n == 2:
        return math.sqrt(lam / upper)
    b = n - 2
    return 0.5 * (-b + math.sqrt(b * b + 4 * (n - 1) * lam / upper))


def _on(points_or_grid, fn, tag):
    if isinstance(points_or_grid, Grid):
        return ScalarField(points_or_grid, fn(points_or_grid.node_coords()), tag)
    return fn(np.asarray(points_or_grid, dtype=float))


def meyers_solution(lam: float, upper: float, points):
    """``|x|^k x_n / |x|`` (``r^k sin(theta)`` in the plane); 0 at the origin."""
    def fn(x):
        n = x.shape[-1]
        k = meyers_exponent(lam, upper, n)
        r = np.linalg.norm(x, axis=-1)
        safe = np.where(r > 0, r, 1.0)
        return np.where(r > 0, safe ** (k - 1.0) * x[..., -1], 0.0)
    return _on(points, fn, "solution")


def meyers_gradient(lam: float, upper: float, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    k = meyers_exponent(lam, upper, n)
    r = np.linalg.norm(x, axis=-1)[..., None]
    e = np.zeros(n)
    e[-1] = 1.0
    return r ** (k - 1.0) * e + (k - 1.0) * r ** (k - 3.0) * x[..., -1:] * x


def sector_solutions(lam: float, upper: float, m: int, points):
    """The m-phase junction solutions ``r^{(m/2) sqrt(lam/L)} |sin(m theta / 2)|``."""
    if m < 2:
        raise ValueError("need at least two phases")
    beta = 0.5 * m * math.sqrt(lam / upper)

    def phase(i):
        def fn(x):
            r = np.hypot(x[..., 0], x[..., 1])
            theta = np.mod(np.arctan2(x[..., 1], x[..., 0]), 2 * np.pi)
            sector = np.minimum(np.floor(theta * m / (2 * np.pi)).astype(np.int64), m - 1)
            val = r ** beta * np.abs(np.sin(0.5 * m * theta))
            return np.where((sector == i) & (r > 0), val, 0.0)
        return fn

    return [_on(points, phase(i), f"phase-{i + 1}") for i in range(m)]


def sector_origin_energies(lam: float, upper: float, m: int, h: float) -> list[float]:
    """Exact energy of each sector phase on the origin cells ``[-h, h]^2``.

    The m-phase energy density is radial, ``lam (m/2)^2 r^{2b-2}`` with
    ``b = (m/2) sqrt(lam/L)``, so each share reduces to an angular integral of
    ``rho(theta)^{2b}`` with ``rho`` the distance to the square's edge.
    """
    from scipy.integrate import quad

    beta = 0.5 * m * math.sqrt(lam / upper)
    c = lam * (0.5 * m) ** 2 / (2 * beta)

    def edge(t):
        return (h / max(abs(math.cos(t)), abs(math.sin(t)))) ** (2 * beta)

    out = []
    for i in range(m):
        a, b = 2 * math.pi * i / m, 2 * math.pi * (i + 1) / m
        kinks = [t for t in np.arange(1, 8) * math.pi / 4 if a < t < b]
        val, _ = quad(edge, a, b, points=kinks or None, epsabs=0, epsrel=1e-13, limit=200)
        out.append(c * val)
    return out


# -- grid diagnostics -------------------------------------------------------------

def l2_error(u: ScalarField, v) -> float:
    """``||u - v||_{L^2(cube)}``; ``v`` is a ScalarField on the same grid or a function.

    Uses 2^n-point Gauss per cell, which integrates the square of a Q1
    difference exactly, so the result vanishes iff the nodal values agree.
    """
    g = u.grid
    if isinstance(v, ScalarField):
        if v.grid != g:
            raise ValueError("grid mismatch")
        diff = u.with_values(u.values - v.values)
        other = None
    else:
        diff, other = u, v
    gp = _gauss_points(g.n)
    phi, _ = basis(gp, g.n)
    corners = corner_values(diff)  # (2^n, cells...)
    cc = g.cell_centres()
    total = 0.0
    for q in range(len(gp)):
        val = np.tensordot(phi[q], corners, axes=1)
        if other is not None:
            val = val - np.asarray(other(cc + 0.5 * g.h * gp[q]))
        total += float(np.add.reduce((val * val).ravel()))
    return math.sqrt(total * (g.h / 2) ** g.n)


def gradient_field(u: ScalarField) -> np.ndarray:
    """Q1 gradient at every cell centre, shape ``cell_shape + (n,)``."""
    g = u.grid
    _, dphi = basis(np.zeros((1, g.n)), g.n)
    corners = corner_values(u)
    grad = np.tensordot(dphi[0], corners, axes=([1], [0]))  # (n, cells...)
    return np.moveaxis(grad, 0, -1) * (2.0 / g.h)


@dataclass(frozen=True)
class MoserRung:
    k: float
    left: float
    right: float

    @property
    def ratio(self) -> float:
        return self.left / self.right if self.right > 0 else math.inf


def moser_ladder_check(u: ScalarField, r: float, rungs: int = 2) -> list[MoserRung]:
    """Both sides of the annular L^{k_i} vs L^2 ladder, ``k_i = 2 n^i / (n-2)^i``.

    left  = ( r^{-n} int_{B_{3r/2} \\ B_r} u^{k_i} )^{2/k_i}
    right =   r^{-n} int_{B_{2r} \\ B_r} u^2
    """
    g = u.grid
    if g.n != 3:
        raise ValueError("the exponent ladder needs n = 3")
    if r >= 0.5 or r <= 0:
        raise ValueError("annulus B_{2r} \\ B_r must stay inside the unit cube (0 < r < 1/2)")
    from .mesh import q1_values
    inner = region_rule(g, 1.5 * r, r)
    outer = region_rule(g, 2.0 * r, r)
    v_in = np.abs(q1_values(u, inner.cell, inner.ref))
    v_out = q1_values(u, outer.cell, outer.ref)
    right = float(np.sum(outer.w * v_out ** 2)) / r ** g.n
    out = []
    for i in range(1, rungs + 1):
        k = 2.0 * g.n ** i / (g.n - 2) ** i
        left = (float(np.sum(inner.w * v_in ** k)) / r ** g.n) ** (2.0 / k)
        out.append(MoserRung(k, left, right))
    return out


def nodal_supnorm(u: ScalarField, radius: float, centre=None) -> float:
    mask = nodes_in_ball(u.grid, radius, centre)
    return float(np.max(np.abs(u.values[mask])))
