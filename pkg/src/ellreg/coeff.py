"""Uniformly elliptic symmetric coefficient fields.

A :class:`MatrixField` is an immutable description of ``x -> A(x)``.  All
evaluation goes through :meth:`MatrixField.evaluate`, which is vectorised over
an array of points and returns full ``(..., n, n)`` symmetric matrices.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field, replace
from typing import Any

import numpy as np
from scipy.stats import qmc

KINDS = ("constant", "meyers", "laminate", "checkerboard", "rotated", "grid-sampled")

# scale factors within this many ulps of 1 are snapped to 1 when views compose
_UNIT_SNAP = 8 * np.finfo(float).eps


class EllipticityError(ValueError):
    pass


@dataclass(frozen=True)
class EllipticityBounds:
    lam: float
    upper: float

    def __post_init__(self):
        if not (0 < self.lam <= self.upper) or not math.isfinite(self.upper):
            raise ValueError(f"need 0 < lambda <= L, got ({self.lam}, {self.upper})")

    @property
    def ratio(self) -> float:
        return self.lam / self.upper


def n_components(n: int) -> int:
    return n * (n + 1) // 2


def _triu(n):
    return np.triu_indices(n)


def pack(mat: np.ndarray) -> np.ndarray:
    """Full symmetric ``(..., n, n)`` -> upper-triangle ``(..., n(n+1)/2)``."""
    n = mat.shape[-1]
    i, j = _triu(n)
    return mat[..., i, j]


def unpack(comps: np.ndarray, n: int) -> np.ndarray:
    i, j = _triu(n)
    out = np.empty(comps.shape[:-1] + (n, n))
    out[..., i, j] = comps
    out[..., j, i] = comps
    return out


@dataclass(frozen=True)
class SymmetricTensor:
    """Symmetric n x n matrix stored by its upper triangle (row-major)."""

    n: int
    upper: tuple

    @classmethod
    def from_matrix(cls, mat) -> "SymmetricTensor":
        mat = np.asarray(mat, dtype=float)
        if mat.shape[0] != mat.shape[1]:
            raise ValueError("tensor must be square")
        return cls(mat.shape[0], tuple(float(v) for v in pack(mat)))

    @property
    def matrix(self) -> np.ndarray:
        return unpack(np.asarray(self.upper), self.n)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    def __array__(self, dtype=None, copy=None):
        m = self.matrix
        return m if dtype is None else m.astype(dtype)


@dataclass(frozen=True)
class MatrixField:
    """A coefficient field ``A in M(lambda, L)`` on R^n.

    ``params`` holds the kind-specific data; ``origin``/``scale`` describe a
    rescaled view ``x -> base(origin + scale * x)``.  Use the constructor
    helpers (:func:`meyers`, :func:`laminate`, ...) rather than building this
    directly.
    """

    n: int
    bounds: EllipticityBounds
    kind: str
    params: dict = dc_field(default_factory=dict, compare=False)
    origin: tuple = ()
    scale: float = 1.0

    def __post_init__(self):
        if self.n not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.n}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown field kind {self.kind!r}")
        if not self.origin:
            object.__setattr__(self, "origin", (0.0,) * self.n)
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    @property
    def lam(self) -> float:
        return self.bounds.lam

    @property
    def upper(self) -> float:
        return self.bounds.upper

    @property
    def is_analytic(self) -> bool:
        return self.kind != "grid-sampled"

    @property
    def is_zero_homogeneous(self) -> bool:
        """True when ``A(c x) = A(x)`` for every c > 0 (about the view origin)."""
        if self.kind == "constant":
            return True
        if self.kind == "meyers" or (self.kind == "rotated" and self.params["angle"] == "radial"):
            return all(v == 0.0 for v in self.origin)
        return False

    def evaluate(self, x) -> np.ndarray:
        """Tensor values at points ``x`` of shape ``(..., n)``."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n:
            raise ValueError(f"points must have trailing dimension {self.n}")
        if self.scale != 1.0 or any(self.origin):
            x = np.asarray(self.origin) + self.scale * x
        return _EVAL[self.kind](self, x)

    def components(self, x) -> np.ndarray:
        """Upper-triangle components at points ``x``."""
        return pack(self.evaluate(x))


def _eval_constant(f, x):
    mat = unpack(np.asarray(f.params["tensor"], dtype=float), f.n)
    return np.broadcast_to(mat, x.shape[:-1] + (f.n, f.n)).copy()


def _eval_meyers(f, x):
    lam, big = f.lam, f.upper
    r2 = np.sum(x * x, axis=-1)
    safe = np.where(r2 > 0, r2, 1.0)
    proj = x[..., :, None] * x[..., None, :] / safe[..., None, None]
    # A(0) := lam * Id; the field is only defined a.e.
    proj = np.where((r2 > 0)[..., None, None], proj, 0.0)
    return lam * np.eye(f.n) + (big - lam) * proj


def _laminate_profile(t, eps, lam, big):
    frac = np.mod(t / eps, 1.0)
    return np.where(frac < 0.5, lam, big)


def _eval_laminate(f, x):
    a = _laminate_profile(x[..., f.params["axis"]], f.params["eps"], f.lam, f.upper)
    return a[..., None, None] * np.eye(f.n)


def _eval_checkerboard(f, x):
    cells = np.floor(x / f.params["eps"]).astype(np.int64)
    parity = np.mod(np.sum(cells, axis=-1), 2)
    a = np.where(parity == 0, f.lam, f.upper)
    return a[..., None, None] * np.eye(f.n)


def _angle_field(angle_id, x):
    if angle_id == "radial":
        return np.arctan2(x[..., 1], x[..., 0])
    if angle_id == "spiral":
        return np.arctan2(x[..., 1], x[..., 0]) + np.pi / 4
    if angle_id == "wave":
        return np.pi * np.sin(np.pi * x[..., 0]) * np.cos(np.pi * x[..., 1])
    try:
        return np.full(x.shape[:-1], float(angle_id))
    except ValueError:
        raise ValueError(f"unknown angle field {angle_id!r}") from None


def _eval_rotated(f, x):
    theta = _angle_field(f.params["angle"], x)
    c, s = np.cos(theta), np.sin(theta)
    out = f.lam * np.broadcast_to(np.eye(f.n), x.shape[:-1] + (f.n, f.n)).copy()
    d = f.upper - f.lam
    out[..., 0, 0] += d * c * c
    out[..., 1, 1] += d * s * s
    out[..., 0, 1] += d * c * s
    out[..., 1, 0] += d * c * s
    return out


def _eval_grid(f, x):
    data = f.params["data"]  # shape (m,)*n + (ncomp,)
    m = data.shape[0]
    h = 2.0 / m
    idx = np.clip(np.floor((x + 1.0) / h).astype(np.int64), 0, m - 1)
    comps = data[tuple(idx[..., d] for d in range(f.n))]
    return unpack(comps, f.n)


_EVAL = {
    "constant": _eval_constant,
    "meyers": _eval_meyers,
    "laminate": _eval_laminate,
    "checkerboard": _eval_checkerboard,
    "rotated": _eval_rotated,
    "grid-sampled": _eval_grid,
}


# -- constructors -----------------------------------------------------------

def constant(tensor, bounds: EllipticityBounds | None = None) -> MatrixField:
    mat = np.atleast_2d(np.asarray(tensor, dtype=float))
    if not np.array_equal(mat, mat.T):
        raise ValueError("constant tensor must be symmetric")
    eig = np.linalg.eigvalsh(mat)
    if bounds is None:
        bounds = EllipticityBounds(float(eig[0]), float(eig[-1]))
    return MatrixField(mat.shape[0], bounds, "constant", {"tensor": tuple(pack(mat))})


def identity(n: int) -> MatrixField:
    return constant(np.eye(n))


def meyers(lam: float, upper: float, n: int = 2) -> MatrixField:
    return MatrixField(n, EllipticityBounds(lam, upper), "meyers")


def laminate(lam: float, upper: float, eps: float, axis: int = 0, n: int = 2) -> MatrixField:
    if eps <= 0:
        raise ValueError("laminate period must be positive")
    if not 0 <= axis < n:
        raise ValueError(f"axis {axis} out of range for n={n}")
    return MatrixField(n, EllipticityBounds(lam, upper), "laminate", {"eps": float(eps), "axis": int(axis)})


def checkerboard(lam: float, upper: float, eps: float, n: int = 2) -> MatrixField:
    return MatrixField(n, EllipticityBounds(lam, upper), "checkerboard", {"eps": float(eps)})


def rotated(lam: float, upper: float, angle: str = "radial", n: int = 2) -> MatrixField:
    _angle_field(str(angle), np.zeros((1, n)))  # validates the id
    return MatrixField(n, EllipticityBounds(lam, upper), "rotated", {"angle": str(angle)})


def grid_sampled(data, bounds: EllipticityBounds) -> MatrixField:
    """Piecewise-constant field on the uniform cells of ``[-1, 1]^n``.

    ``data`` has shape ``(m,)*n + (n, n)`` (full tensors) or
    ``(m,)*n + (n(n+1)/2,)`` (upper triangles).
    """
    data = np.asarray(data, dtype=float)
    if data.ndim >= 3 and data.shape[-1] == data.shape[-2] and data.ndim - 2 in (2, 3):
        n = data.ndim - 2
        if not np.allclose(data, np.swapaxes(data, -1, -2), rtol=0, atol=0):
            raise ValueError("grid-sampled tensors must be symmetric")
        data = pack(data)
    else:
        n = data.ndim - 1
        if data.shape[-1] != n_components(n):
            raise ValueError("bad component count for grid-sampled field")
    if len(set(data.shape[:-1])) != 1:
        raise ValueError("grid-sampled data must be cubic")
    data.setflags(write=False)
    return MatrixField(n, bounds, "grid-sampled", {"data": data})


# -- operations ---------------------------------------------------------------

def eval_tensor(field: MatrixField, x) -> SymmetricTensor:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("evaluation point must be finite")
    return SymmetricTensor.from_matrix(field.evaluate(x[None, :])[0])


@dataclass(frozen=True)
class EllipticityReport:
    ok: bool
    min_eig: float
    max_eig: float
    argmin: tuple
    argmax: tuple
    offending_cells: tuple = ()


def _sample_points(n, count, seed):
    sampler = qmc.Halton(d=n, scramble=True, seed=seed)
    return 2.0 * sampler.random(count) - 1.0


def verify_ellipticity(field: MatrixField, sample_count: int = 10_000, tol: float | None = None,
                       seed: int = 0) -> EllipticityReport:
    """Check eigenvalues of ``A`` against ``[lambda - tol, L + tol]``.

    Analytic fields are probed at quasi-random points of ``[-1, 1]^n``;
    grid-sampled fields are checked cell by cell (every cell, so an isolated
    bad cell is always found).
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    if tol is None:
        tol = 1e-9 if field.is_analytic else 1e-7
    if field.kind == "grid-sampled" and field.scale == 1.0 and not any(field.origin):
        data = field.params["data"]
        eig = np.linalg.eigvalsh(unpack(data, field.n))
        lo, hi = eig[..., 0], eig[..., -1]
        bad = (lo < field.lam - tol) | (hi > field.upper + tol)
        i_min = np.unravel_index(np.argmin(lo), lo.shape)
        i_max = np.unravel_index(np.argmax(hi), hi.shape)
        return EllipticityReport(
            ok=not bool(bad.any()),
            min_eig=float(lo[i_min]), max_eig=float(hi[i_max]),
            argmin=tuple(int(i) for i in i_min), argmax=tuple(int(i) for i in i_max),
            offending_cells=tuple(tuple(int(i) for i in c) for c in np.argwhere(bad)),
        )
    pts = _sample_points(field.n, sample_count, seed)
    eig = np.linalg.eigvalsh(field.evaluate(pts))
    lo, hi = eig[:, 0], eig[:, -1]
    i_min, i_max = int(np.argmin(lo)), int(np.argmax(hi))
    ok = bool(lo[i_min] >= field.lam - tol and hi[i_max] <= field.upper + tol)
    return EllipticityReport(ok, float(lo[i_min]), float(hi[i_max]),
                             tuple(pts[i_min]), tuple(pts[i_max]))


def _bump(rho):
    return np.where(rho < 1.0, (1.0 - np.minimum(rho, 1.0) ** 2) ** 3, 0.0)


def mollifier_rule(eps: float, n: int, order: int | None = None):
    """Offsets and weights of the normalised bump ``c (1 - |y/eps|^2)^3``."""
    order = order or (12 if n == 2 else 8)
    t, w = np.polynomial.legendre.leggauss(order)
    grids = np.meshgrid(*([t] * n), indexing="ij")
    offs = np.stack([g.ravel() for g in grids], axis=-1)
    wts = np.prod(np.stack(np.meshgrid(*([w] * n), indexing="ij")), axis=0).ravel()
    wts = wts * _bump(np.linalg.norm(offs, axis=-1))
    keep = wts > 0
    return eps * offs[keep], wts[keep] / wts[keep].sum()


def mollify_field(field: MatrixField, eps: float, m: int) -> MatrixField:
    """Entrywise convolution with a bump of radius ``eps``, sampled per cell.

    The result is grid-sampled on the ``m``-cell grid of ``[-1, 1]^n`` with
    each cell carrying the mollified tensor at its centre.  When ``eps`` is
    below one cell width the cell average is returned instead.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    n = field.n
    h = 2.0 / m
    centres = -1.0 + h * (np.arange(m) + 0.5)
    cc = np.stack(np.meshgrid(*([centres] * n), indexing="ij"), axis=-1)
    if eps < h:
        t, w = np.polynomial.legendre.leggauss(4)
        offs = np.stack([g.ravel() for g in np.meshgrid(*([t] * n), indexing="ij")], axis=-1) * (h / 2)
        wts = np.prod(np.stack(np.meshgrid(*([w] * n), indexing="ij")), axis=0).ravel()
        wts = wts / wts.sum()
    else:
        offs, wts = mollifier_rule(eps, n)
    out = np.zeros(cc.shape[:-1] + (n_components(n),))
    for o, w in zip(offs, wts):
        out += w * field.components(cc + o)
    return grid_sampled(out, field.bounds)


def rescale_field(field: MatrixField, x0, r: float) -> MatrixField:
    """View ``x -> field(x0 + r x)``; nested views collapse to one affine map."""
    if not r > 0:
        raise ValueError("rescaling radius must be positive")
    x0 = np.asarray(x0, dtype=float).reshape(field.n)
    origin = np.asarray(field.origin) + field.scale * x0
    scale = field.scale * r
    if abs(scale - 1.0) <= _UNIT_SNAP:
        scale = 1.0
    if field.kind == "constant":
        return field
    return replace(field, origin=tuple(float(v) for v in origin), scale=float(scale))


def form_decomposition_residual(tensors: np.ndarray, x: np.ndarray, xi: np.ndarray,
                                lam: float, upper: float) -> np.ndarray:
    """Vectorised ``(A xi.xi) - [(A xi.nu)^2 / L + lam |xi_S|^2]``."""
    r = np.linalg.norm(x, axis=-1)
    if np.any(r == 0):
        raise ValueError("radial direction undefined at x = 0")
    nu = x / r[..., None]
    a_xi = np.einsum("...ij,...j->...i", tensors, xi)
    quad = np.sum(a_xi * xi, axis=-1)
    radial = np.sum(a_xi * nu, axis=-1)
    xi_s = xi - np.sum(xi * nu, axis=-1)[..., None] * nu
    return quad - (radial ** 2 / upper + lam * np.sum(xi_s * xi_s, axis=-1))


def form_decomposition_check(field: MatrixField, x, xi) -> float:
    x = np.asarray(x, dtype=float)[None, :]
    xi = np.asarray(xi, dtype=float)[None, :]
    return float(form_decomposition_residual(field.evaluate(x), x, xi, field.lam, field.upper)[0])


# -- configuration ------------------------------------------------------------

def field_from_config(cfg: dict[str, Any], n: int = 2) -> MatrixField:
    """Build a field from flat ``field.*`` keys (values may be strings)."""
    kind = str(cfg.get("field.kind", "")).strip()
    if kind not in KINDS or kind == "grid-sampled" and "field.file" not in cfg:
        raise ValueError(f"field.kind: unknown or incomplete kind {kind!r}")
    lam = float(cfg.get("field.lambda", 1.0))
    big = float(cfg.get("field.L", lam))
    if kind == "constant":
        return constant(np.diag([lam] * (n - 1) + [big]) if lam != big else lam * np.eye(n))
    if kind == "meyers":
        return meyers(lam, big, n)
    if kind == "laminate":
        return laminate(lam, big, float(cfg["field.eps"]), int(cfg.get("field.axis", 0)), n)
    if kind == "checkerboard":
        return checkerboard(lam, big, float(cfg["field.eps"]), n)
    if kind == "rotated":
        return rotated(lam, big, str(cfg.get("field.angle", "radial")), n)
    from .io import read_field_binary
    return read_field_binary(cfg["field.file"], EllipticityBounds(lam, big))


def field_to_config(field: MatrixField) -> dict[str, str]:
    out = {"field.kind": field.kind, "field.lambda": repr(field.lam), "field.L": repr(field.upper)}
    if field.kind in ("laminate", "checkerboard"):
        out["field.eps"] = repr(field.params["eps"])
    if field.kind == "laminate":
        out["field.axis"] = str(field.params["axis"])
    if field.kind == "rotated":
        out["field.angle"] = field.params["angle"]
    return out
