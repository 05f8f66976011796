"""First Dirichlet eigenvalues of arcs and spherical caps, and partition optima.

Cap eigenvalues solve the zonal Sturm-Liouville problem

    (sin^{n-2}(t) f')' + Lam sin^{n-2}(t) f = 0,   f'(0) = 0,  f(t0) = 0

by fixed-step RK4 shooting from the pole and bisection on ``Lam``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy.optimize import brentq
from scipy.special import jv

STEPS = 2000


@dataclass(frozen=True)
class CapSpec:
    n: int  # ambient dimension; the cap lives on S^{n-1}
    theta0: float

    def __post_init__(self):
        if self.n not in (2, 3, 4):
            raise ValueError("cap eigenvalues are supported for n in {2, 3, 4}")
        if not 0 < self.theta0 < math.pi:
            raise ValueError("opening angle must lie in (0, pi)")


@dataclass(frozen=True)
class PartitionSpec:
    """``m`` arcs of S^1 (``lengths``) or two complementary caps of S^{n-1}."""

    n: int
    lengths: tuple = ()
    theta0: float | None = None

    def __post_init__(self):
        if self.n == 2:
            if len(self.lengths) < 2 or min(self.lengths) <= 0:
                raise ValueError("need at least two positive arc lengths")
            if abs(sum(self.lengths) - 2 * math.pi) > 1e-9:
                raise ValueError("arc lengths must sum to 2 pi")
        elif self.theta0 is None or not 0 < self.theta0 < math.pi:
            raise ValueError("cap partition needs an angle in (0, pi)")

    @property
    def m(self) -> int:
        return len(self.lengths) if self.n == 2 else 2


@dataclass(frozen=True)
class EigReport:
    value: float
    iterations: int
    residual: float

    def csv_row(self, theta0: float) -> str:
        return f"{theta0:.17g},{self.value:.17g},{self.residual:.17g}"


class BracketError(RuntimeError):
    pass


def arc_eigenvalue(length: float) -> float:
    """``(pi / length)^2``: Dirichlet Laplacian on an arc of S^1."""
    if not 0 < length <= 2 * math.pi:
        raise ValueError("arc length must lie in (0, 2 pi]")
    return (math.pi / length) ** 2


def _bessel_zero(order: float) -> float:
    # first positive zero of J_order, order > -1
    guess = 2.404825557695773 if order == 0 else order + 1.8557571 * (order + 1) ** (1 / 3) + 0.5
    lo, hi = max(0.1, 0.5 * guess), 1.5 * guess + 1
    xs = np.linspace(lo, hi, 400)
    vals = jv(order, xs)
    k = int(np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0])
    return brentq(lambda t: jv(order, t), xs[k], xs[k + 1], xtol=1e-15)


def flat_estimate(cap: CapSpec) -> float:
    """Euclidean small-cap limit ``(j / theta0)^2``, ``j`` the first zero of J_{(n-3)/2}."""
    return (_bessel_zero(0.5 * (cap.n - 3)) / cap.theta0) ** 2


@numba.njit(cache=True)
def _shoot_scalar(n, theta0, lam, steps):
    h = theta0 / steps
    b = n - 2
    a1 = -lam / (2 * (n - 1))
    a2 = a1 * (2 * b / 3 - lam) / (4 * (n + 1))
    f = 1 + a1 * h ** 2 + a2 * h ** 4
    df = 2 * a1 * h + 4 * a2 * h ** 3
    t = h
    for _ in range(steps - 1):
        k1f = df
        k1d = -b * df / math.tan(t) - lam * f
        f2, d2 = f + 0.5 * h * k1f, df + 0.5 * h * k1d
        k2f = d2
        k2d = -b * d2 / math.tan(t + 0.5 * h) - lam * f2
        f3, d3 = f + 0.5 * h * k2f, df + 0.5 * h * k2d
        k3f = d3
        k3d = -b * d3 / math.tan(t + 0.5 * h) - lam * f3
        f4, d4 = f + h * k3f, df + h * k3d
        k4f = d4
        k4d = -b * d4 / math.tan(t + h) - lam * f4
        f += h / 6 * (k1f + 2 * k2f + 2 * k3f + k4f)
        df += h / 6 * (k1d + 2 * k2d + 2 * k3d + k4d)
        t += h
    return f


def shoot(n: int, theta0: float, lam, steps: int = STEPS) -> np.ndarray:
    """``f(theta0)`` for each trial eigenvalue in ``lam``.

    The series ``f = 1 + a1 t^2 + a2 t^4`` covers the first step, which keeps
    the ``cot`` singularity at the pole out of the integrator.
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    return np.array([_shoot_scalar(n, float(theta0), float(v), steps) for v in lam])


def cap_eigenvalue(cap: CapSpec, tol: float = 1e-12) -> EigReport:
    """Smallest ``Lam`` with ``f(theta0) = 0``: bracket, then bisection."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    n, t0 = cap.n, cap.theta0
    if n == 2:
        return EigReport(arc_eigenvalue(2 * t0), 0, 0.0)
    est = flat_estimate(cap)
    lo, hi = 0.5 * est, 2.0 * est
    for _ in range(60):
        if _shoot_scalar(n, t0, lo, STEPS) > 0:
            break
        lo *= 0.5
    else:
        raise BracketError(f"no positive shot above Lam = {lo:g}")
    for _ in range(60):
        if _shoot_scalar(n, t0, hi, STEPS) < 0:
            break
        hi *= 1.5
    else:
        raise BracketError(f"no sign change in [{lo:g}, {hi:g}]")
    it = 0
    while hi - lo > tol * max(1.0, hi) and it < 200:
        it += 1
        mid = 0.5 * (lo + hi)
        if _shoot_scalar(n, t0, mid, STEPS) > 0:
            lo = mid
        else:
            hi = mid
    lam = 0.5 * (lo + hi)
    return EigReport(lam, it, abs(_shoot_scalar(n, t0, lam, STEPS)))


def partition_objective(spec: PartitionSpec) -> float:
    """``(1/m) sum_i sqrt(Lam_1(piece_i))``."""
    if spec.n == 2:
        return sum(math.pi / ell for ell in spec.lengths) / spec.m
    a = cap_eigenvalue(CapSpec(spec.n, spec.theta0)).value
    b = cap_eigenvalue(CapSpec(spec.n, math.pi - spec.theta0)).value
    return 0.5 * (math.sqrt(a) + math.sqrt(b))


@dataclass(frozen=True)
class PartitionResult:
    spec: PartitionSpec
    value: float
    iterations: int

    def csv_row(self) -> str:
        parts = self.spec.lengths if self.spec.n == 2 else (self.spec.theta0, math.pi - self.spec.theta0)
        return ",".join([str(self.spec.m), f"{self.value:.17g}"] + [f"{p:.17g}" for p in parts])


class OptimizerStall(RuntimeError):
    def __init__(self, msg, last):
        super().__init__(msg)
        self.last = last


def _optimize_arcs(m: int, tol: float = 1e-9, maxiter: int = 10_000) -> PartitionResult:
    # deterministic unequal start so the descent has work to do
    w = 1.0 + 0.5 * np.sin(np.arange(1, m + 1))
    ell = 2 * math.pi * w / w.sum()

    def obj(x):
        return float(np.sum(math.pi / x) / m)

    step = 1.0
    val = obj(ell)
    for it in range(1, maxiter + 1):
        grad = -math.pi / (m * ell ** 2)
        direction = -(grad - grad.mean())  # projected onto sum(ell) = const
        if np.max(np.abs(direction)) < tol:
            return PartitionResult(PartitionSpec(2, tuple(ell)), val, it)
        while True:
            trial = ell + step * direction
            if np.all(trial > 0):
                tval = obj(trial)
                if tval < val and tval <= val - 1e-4 * step * float(direction @ direction):
                    break
            step *= 0.5
            if step < 1e-20:
                # no representable decrease left
                return PartitionResult(PartitionSpec(2, tuple(ell)), val, it)
        ell = trial * (2 * math.pi / trial.sum())
        val = obj(ell)
        step = min(4 * step, 10.0)
    raise OptimizerStall("arc partition descent did not converge", tuple(ell))


def _optimize_caps(n: int, tol: float = 1e-6) -> PartitionResult:
    def obj(t):
        return partition_objective(PartitionSpec(n, theta0=t))

    invphi = (math.sqrt(5) - 1) / 2
    a, b = math.pi / 6, 5 * math.pi / 6
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = obj(c), obj(d)
    it = 0
    while b - a > tol:
        it += 1
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = obj(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = obj(d)
        if it > 200:
            raise OptimizerStall("golden-section search did not converge", (0.5 * (a + b),))
    t = 0.5 * (a + b)
    return PartitionResult(PartitionSpec(n, theta0=t), obj(t), it)


def optimize_partition(n: int, m: int = 2) -> PartitionResult:
    """Minimise the partition objective over m-arc partitions of S^1 (n = 2)
    or over complementary cap pairs of S^{n-1} (n >= 3, m = 2)."""
    if n == 2:
        if m < 2:
            raise ValueError("need m >= 2 arcs")
        return _optimize_arcs(m)
    if m != 2:
        raise ValueError("cap partitions are two-phase only")
    return _optimize_caps(n)
