import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ellreg import coeff
from ellreg.coeff import EllipticityBounds, EllipticityError, SymmetricTensor

finite = st.floats(-1.0, 1.0, allow_nan=False)
bounds = st.tuples(st.floats(0.1, 5.0), st.floats(1.0, 20.0)).map(lambda t: (t[0], t[0] * t[1]))


def test_bounds_invariant():
    with pytest.raises(ValueError):
        EllipticityBounds(2.0, 1.0)
    with pytest.raises(ValueError):
        EllipticityBounds(0.0, 1.0)


def test_symmetric_tensor_roundtrip():
    mat = np.array([[2.0, 0.5, 0.1], [0.5, 3.0, -0.2], [0.1, -0.2, 1.0]])
    t = SymmetricTensor.from_matrix(mat)
    assert len(t.upper) == 6
    assert np.array_equal(t.matrix, mat)


class TestEvalTensor:
    def test_meyers_on_axis(self):
        t = coeff.eval_tensor(coeff.meyers(1, 4), [1.0, 0.0])
        assert np.allclose(t.matrix, np.diag([4.0, 1.0]), atol=1e-15)

    def test_identity_everywhere(self):
        t = coeff.eval_tensor(coeff.identity(2), [0.3, -0.7])
        assert np.array_equal(t.matrix, np.eye(2))

    def test_meyers_diagonal_direction(self):
        t = coeff.eval_tensor(coeff.meyers(1, 4), np.array([1.0, 1.0]) / math.sqrt(2))
        assert np.allclose(t.matrix, [[2.5, 1.5], [1.5, 2.5]], atol=1e-14)

    def test_meyers_origin_convention(self):
        t = coeff.eval_tensor(coeff.meyers(1, 4), [0.0, 0.0])
        assert np.array_equal(t.matrix, np.eye(2))

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            coeff.eval_tensor(coeff.identity(2), [np.nan, 0.0])


class TestVerifyEllipticity:
    def test_meyers_extremes(self):
        rep = coeff.verify_ellipticity(coeff.meyers(1, 4), 10_000)
        assert rep.ok
        assert rep.min_eig == pytest.approx(1.0, abs=1e-12)
        assert rep.max_eig == pytest.approx(4.0, abs=1e-12)

    def test_identity_unit_bounds(self):
        f = coeff.constant(np.eye(2), EllipticityBounds(1.0, 1.0))
        assert coeff.verify_ellipticity(f, 50).ok

    def test_injected_bad_cell_is_reported(self):
        data = np.zeros((8, 8, 3))
        data[..., 0] = 2.0
        data[..., 2] = 2.0
        data[3, 5] = [0.5, 0.0, 2.0]
        f = coeff.grid_sampled(data, EllipticityBounds(1.0, 4.0))
        rep = coeff.verify_ellipticity(f, 100)
        assert not rep.ok
        assert rep.offending_cells == ((3, 5),)
        assert rep.min_eig == pytest.approx(0.5)
        assert rep.argmin == (3, 5)

    def test_sample_count_positive(self):
        with pytest.raises(ValueError):
            coeff.verify_ellipticity(coeff.identity(2), 0)


@pytest.mark.parametrize("kind", ["meyers", "laminate", "checkerboard", "radial", "spiral", "wave"])
@pytest.mark.parametrize("n", [2, 3])
def test_analytic_kinds_stay_in_bounds(kind, n, rng):
    if kind == "meyers":
        f = coeff.meyers(1.0, 9.0, n)
    elif kind == "laminate":
        f = coeff.laminate(1.0, 9.0, 0.3, axis=n - 1, n=n)
    elif kind == "checkerboard":
        f = coeff.checkerboard(1.0, 9.0, 0.2, n)
    else:
        f = coeff.rotated(1.0, 9.0, kind, n)
    x = rng.uniform(-1, 1, (2000, n))
    eig = np.linalg.eigvalsh(f.evaluate(x))
    assert eig.min() >= 1.0 - 1e-12
    assert eig.max() <= 9.0 + 1e-12
    assert np.array_equal(f.evaluate(x), np.swapaxes(f.evaluate(x), -1, -2))


@given(bounds, st.lists(finite, min_size=3, max_size=3))
def test_meyers_eigenvalues_exact(b, x):
    lam, big = b
    x = np.asarray(x)
    if np.linalg.norm(x) < 1e-6:
        return
    eig = coeff.eval_tensor(coeff.meyers(lam, big, 3), x).eigenvalues()
    assert eig[0] >= lam * (1 - 1e-12)
    assert eig[-1] <= big * (1 + 1e-12)


class TestMollify:
    def test_constant_unchanged(self):
        f = coeff.constant(np.array([[2.0, 0.3], [0.3, 1.0]]))
        g = coeff.mollify_field(f, 0.2, 16)
        x = np.random.default_rng(0).uniform(-1, 1, (50, 2))
        assert np.allclose(g.evaluate(x), f.evaluate(x), atol=1e-14)

    def test_laminate_entries_in_range(self):
        g = coeff.mollify_field(coeff.laminate(1, 4, 0.25), 0.25, 64)
        d = g.params["data"]
        assert d[..., 0].min() >= 1.0 and d[..., 0].max() <= 4.0
        assert np.all(d[..., 1] == 0.0)
        assert coeff.verify_ellipticity(g).ok

    def test_laminate_transition_width(self):
        # a short bump leaves plateaus away from the interfaces
        g = coeff.mollify_field(coeff.laminate(1, 4, 1.0), 0.05, 128)
        col = g.params["data"][:, 0, 0]
        assert col.min() == pytest.approx(1.0, abs=1e-12)
        assert col.max() == pytest.approx(4.0, abs=1e-12)
        ramp = np.flatnonzero((col > 1 + 1e-12) & (col < 4 - 1e-12))
        h = 2 / 128
        runs = np.split(ramp, np.flatnonzero(np.diff(ramp) > 1) + 1)
        assert len(runs) == 5  # interfaces at -1, -1/2, 0, 1/2, 1
        assert all(len(run) * h <= 2 * 0.05 + h for run in runs)

    def test_meyers_near_axis(self):
        g = coeff.mollify_field(coeff.meyers(1, 4), 0.01, 256)
        a = g.evaluate(np.array([[1.0, 0.0]]))[0]
        assert abs(a[0, 0] - 4) < 0.05 and abs(a[1, 1] - 1) < 0.05

    def test_small_eps_falls_back_to_cell_average(self):
        f = coeff.laminate(1, 4, 0.5)
        g = coeff.mollify_field(f, 1e-4, 8)
        assert g.kind == "grid-sampled"
        # cells straddle no interface at this resolution: exact phase values
        assert set(np.round(g.params["data"][..., 0].ravel(), 12)) <= {1.0, 4.0, 2.5}

    @given(bounds, st.floats(0.05, 0.4))
    def test_preserves_bounds(self, b, eps):
        lam, big = b
        g = coeff.mollify_field(coeff.meyers(lam, big), eps, 16)
        eig = np.linalg.eigvalsh(coeff.unpack(g.params["data"], 2))
        assert eig.min() >= lam * (1 - 1e-12)
        assert eig.max() <= big * (1 + 1e-12)

    def test_rejects_nonpositive_eps(self):
        with pytest.raises(ValueError):
            coeff.mollify_field(coeff.identity(2), 0.0, 8)


class TestRescale:
    def test_constant_identical(self):
        f = coeff.identity(2)
        assert coeff.rescale_field(f, [0.3, 0.1], 5.0) is f

    def test_meyers_zero_homogeneous(self):
        g = coeff.rescale_field(coeff.meyers(1, 4), [0.0, 0.0], 10.0)
        assert np.allclose(g.evaluate(np.array([[0.1, 0.0]]))[0], np.diag([4.0, 1.0]), atol=1e-14)
        assert g.is_zero_homogeneous

    def test_laminate_period(self, rng):
        g = coeff.rescale_field(coeff.laminate(1, 4, 0.25), [0.0, 0.0], 0.25)
        ref = coeff.laminate(1, 4, 1.0)
        x = rng.uniform(-1, 1, (500, 2))
        assert np.array_equal(g.evaluate(x), ref.evaluate(x))

    @given(st.lists(finite, min_size=2, max_size=2), st.floats(0.1, 10.0),
           st.lists(finite, min_size=2, max_size=2))
    def test_composition_law(self, x0, r, x):
        f = coeff.rotated(1, 4, "spiral")
        back = coeff.rescale_field(coeff.rescale_field(f, x0, r), [0.0, 0.0], 1.0 / r)
        x = np.asarray(x)
        assert np.array_equal(back.evaluate(x[None]), f.evaluate((np.asarray(x0) + x)[None]))

    def test_bounds_preserved(self):
        g = coeff.rescale_field(coeff.meyers(1, 4), [0.2, 0.0], 0.5)
        assert g.bounds == EllipticityBounds(1, 4)


class TestFormDecomposition:
    def test_identity_radial(self):
        assert coeff.form_decomposition_check(coeff.identity(2), [0.3, 0.4], [0.6, 0.8]) == pytest.approx(0, abs=1e-15)

    def test_meyers_tangential(self):
        assert coeff.form_decomposition_check(coeff.meyers(1, 4), [1.0, 0.0], [0.0, 1.0]) == pytest.approx(0, abs=1e-15)

    def test_origin_rejected(self):
        with pytest.raises(ValueError):
            coeff.form_decomposition_check(coeff.meyers(1, 4), [0.0, 0.0], [1.0, 0.0])

    @pytest.mark.parametrize("field", [coeff.meyers(1, 4), coeff.rotated(1, 4, "spiral"),
                                       coeff.laminate(1, 4, 0.1), coeff.meyers(0.5, 3, 3)])
    def test_monte_carlo_nonnegative(self, field, rng):
        x = rng.uniform(-1, 1, (20_000, field.n))
        xi = rng.normal(size=(20_000, field.n))
        res = coeff.form_decomposition_residual(field.evaluate(x), x, xi, field.lam, field.upper)
        assert res.min() >= -1e-12


class TestConfig:
    @pytest.mark.parametrize("field", [coeff.meyers(1, 4), coeff.laminate(1, 4, 0.125, 1),
                                       coeff.checkerboard(1, 9, 0.25), coeff.rotated(1, 2, "wave")])
    def test_roundtrip(self, field, rng):
        back = coeff.field_from_config(coeff.field_to_config(field), field.n)
        x = rng.uniform(-1, 1, (100, 2))
        assert np.array_equal(back.evaluate(x), field.evaluate(x))

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="field.kind"):
            coeff.field_from_config({"field.kind": "spiral-galaxy"})


def test_grid_sampled_rejects_asymmetric():
    data = np.zeros((4, 4, 2, 2))
    data[..., 0, 1] = 1.0
    with pytest.raises(ValueError):
        coeff.grid_sampled(data, EllipticityBounds(1, 4))


def test_ellipticity_error_is_value_error():
    assert issubclass(EllipticityError, ValueError)
