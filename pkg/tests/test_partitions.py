import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ellreg import functionals as F
from ellreg import partitions as P
from ellreg.partitions import CapSpec, PartitionSpec


class TestArcs:
    @pytest.mark.parametrize("length,value", [(math.pi, 1.0), (math.pi / 2, 4.0), (2 * math.pi / 3, 2.25)])
    def test_values(self, length, value):
        assert P.arc_eigenvalue(length) == pytest.approx(value, rel=1e-15)

    def test_domain(self):
        with pytest.raises(ValueError):
            P.arc_eigenvalue(0.0)
        with pytest.raises(ValueError):
            P.arc_eigenvalue(7.0)


class TestCaps:
    @pytest.mark.parametrize("n", [3, 4])
    def test_hemisphere(self, n):
        rep = P.cap_eigenvalue(CapSpec(n, math.pi / 2))
        assert rep.value == pytest.approx(n - 1, abs=1e-6)
        assert rep.iterations > 0

    def test_small_cap_flat_limit(self):
        rep = P.cap_eigenvalue(CapSpec(3, 0.1))
        assert rep.value == pytest.approx((2.404826 / 0.1) ** 2, rel=0.02)
        assert rep.value == pytest.approx(577.98478, rel=1e-6)  # frozen

    def test_circle_reduces_to_arc(self):
        assert P.cap_eigenvalue(CapSpec(2, 1.0)).value == pytest.approx(P.arc_eigenvalue(2.0))

    def test_strictly_decreasing(self):
        angles = np.linspace(0.2, 2.9, 20)
        vals = [P.cap_eigenvalue(CapSpec(3, t), tol=1e-10).value for t in angles]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_known_zonal_value(self):
        # zonal eigenfunctions on S^2 are Legendre functions: P_nu(cos t0) = 0 with nu(nu + 1) = Lam
        from scipy.special import lpmv
        rep = P.cap_eigenvalue(CapSpec(3, 2 * math.pi / 3))
        nu = (-1 + math.sqrt(1 + 4 * rep.value)) / 2
        assert abs(lpmv(0, nu, math.cos(2 * math.pi / 3))) < 1e-7

    def test_validation(self):
        with pytest.raises(ValueError):
            CapSpec(5, 1.0)
        with pytest.raises(ValueError):
            CapSpec(3, math.pi)
        with pytest.raises(ValueError):
            P.cap_eigenvalue(CapSpec(3, 1.0), tol=0)

    def test_csv(self):
        rep = P.EigReport(2.0, 10, 1e-12)
        assert rep.csv_row(1.5) == "1.5,2,9.9999999999999998e-13"


class TestObjective:
    def test_half_circles(self):
        assert P.partition_objective(PartitionSpec(2, (math.pi, math.pi))) == pytest.approx(1.0)

    def test_equal_thirds(self):
        assert P.partition_objective(PartitionSpec(2, (2 * math.pi / 3,) * 3)) == pytest.approx(1.5)

    def test_hemispheres(self):
        val = P.partition_objective(PartitionSpec(3, theta0=math.pi / 2))
        assert val == pytest.approx(math.sqrt(2), abs=1e-6)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            PartitionSpec(2, (1.0, 1.0))
        with pytest.raises(ValueError):
            PartitionSpec(3)

    @given(st.lists(st.floats(0.1, 1.0), min_size=2, max_size=6))
    def test_equal_arcs_are_optimal(self, w):
        lengths = tuple(2 * math.pi * np.asarray(w) / sum(w))
        m = len(lengths)
        assert P.partition_objective(PartitionSpec(2, lengths)) >= m / 2 - 1e-12


class TestOptimize:
    @pytest.mark.parametrize("m", [2, 3, 4, 5, 6])
    def test_arcs(self, m):
        res = P.optimize_partition(2, m)
        assert res.value == pytest.approx(m / 2, abs=1e-8)
        assert np.allclose(res.spec.lengths, 2 * math.pi / m, atol=1e-4)

    def test_two_caps(self):
        res = P.optimize_partition(3, 2)
        assert res.spec.theta0 == pytest.approx(math.pi / 2, abs=1e-4)
        assert res.value == pytest.approx(math.sqrt(2), abs=1e-5)

    def test_csv_row(self):
        row = P.optimize_partition(2, 3).csv_row().split(",")
        assert row[0] == "3" and float(row[1]) == pytest.approx(1.5, abs=1e-12)
        assert len(row) == 5

    def test_validation(self):
        with pytest.raises(ValueError):
            P.optimize_partition(2, 1)
        with pytest.raises(ValueError):
            P.optimize_partition(3, 3)


class TestConsistency:
    @pytest.mark.parametrize("m", [2, 3, 4])
    def test_k_star_identity(self, m):
        assert F.acf_exponent(m, 1, 4) == math.sqrt(1 / 4) * (m / 2)

    @pytest.mark.parametrize("lam,big", [(1, 1), (1, 4), (2, 3)])
    def test_mu_from_hemisphere(self, lam, big):
        lam1 = P.cap_eigenvalue(CapSpec(3, math.pi / 2)).value
        assert F.decay_mu(lam, big, 3) == pytest.approx(math.sqrt(lam / big) * math.sqrt(lam1) - 0.5, abs=1e-9)

    def test_flat_estimate(self):
        assert P.flat_estimate(CapSpec(3, 0.1)) == pytest.approx((2.404825557695773 / 0.1) ** 2, rel=1e-12)
        assert P.flat_estimate(CapSpec(4, 0.1)) == pytest.approx((math.pi / 0.1) ** 2, rel=1e-12)
