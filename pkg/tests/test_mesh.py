import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ellreg import mesh
from ellreg.mesh import Grid, ScalarField, integrate, nodes_in_ball, q1_gradients, region_rule


def test_grid_basics():
    g = Grid(2, 8)
    assert g.h == 0.25
    assert g.node_shape == (9, 9)
    assert g.centre_index() == (4, 4)
    assert np.array_equal(g.node_coords()[4, 4], [0.0, 0.0])
    assert g.boundary_mask().sum() == 32


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid(4, 8)
    with pytest.raises(ValueError):
        Grid(2, 2)
    with pytest.raises(ValueError):
        Grid(2, 7).centre_index()


def test_scalar_field_is_read_only():
    u = ScalarField.from_function(Grid(2, 4), lambda x: x[..., 0])
    with pytest.raises(ValueError):
        u.values[0, 0] = 1.0


def test_scalar_field_rejects_nan():
    with pytest.raises(ValueError):
        ScalarField(Grid(2, 4), np.full((5, 5), np.nan))


def test_interpolation_exact_for_bilinear(rng):
    g = Grid(2, 16)
    u = ScalarField.from_function(g, lambda x: 1 + 2 * x[..., 0] - x[..., 1] + 3 * x[..., 0] * x[..., 1])
    p = rng.uniform(-1, 1, (200, 2))
    assert np.allclose(u.interpolate(p), 1 + 2 * p[:, 0] - p[:, 1] + 3 * p[:, 0] * p[:, 1], atol=1e-13)
    with pytest.raises(ValueError):
        u.interpolate(np.array([[1.5, 0.0]]))


@pytest.mark.parametrize("n,r", [(2, 0.5), (2, 0.93), (3, 0.6)])
def test_ball_volume(n, r):
    g = Grid(n, 64)
    rule = region_rule(g, r)
    exact = math.pi * r * r if n == 2 else 4 / 3 * math.pi * r ** 3
    assert abs(rule.w.sum() - exact) / exact < 2e-3


def test_annulus_volume():
    g = Grid(2, 128)
    rule = region_rule(g, 0.8, 0.3)
    assert rule.w.sum() == pytest.approx(math.pi * (0.64 - 0.09), rel=1e-3)


def test_skip_origin_cells():
    g = Grid(2, 16)
    full = region_rule(g, 0.5).w.sum()
    skip = region_rule(g, 0.5, skip_origin_cells=True).w.sum()
    assert full - skip == pytest.approx((2 * g.h) ** 2)


def test_gradients_of_linear_data():
    g = Grid(3, 8)
    u = ScalarField.from_function(g, lambda x: x @ np.array([1.0, -2.0, 0.5]))
    rule = region_rule(g, 0.7)
    assert np.allclose(q1_gradients(u, rule.cell, rule.ref), [1.0, -2.0, 0.5], atol=1e-13)
    assert integrate(rule, np.ones(rule.size)) == pytest.approx(rule.w.sum())


@given(st.floats(0.05, 1.0))
def test_nodes_in_ball_contains_centre(r):
    g = Grid(2, 16)
    mask = nodes_in_ball(g, r)
    assert mask[g.centre_index()]
    d = np.linalg.norm(g.node_coords()[mask], axis=-1)
    assert d.max() <= r + 1e-12


class TestSpherePoints:
    @pytest.mark.parametrize("n", [2, 3])
    def test_on_sphere_and_dense(self, n):
        g = Grid(n, 32)
        x = mesh.sphere_points(n, 0.5, g.h)
        assert np.allclose(np.linalg.norm(x, axis=-1), 0.5, atol=1e-15)
        assert len(x) >= (8 * 2 * np.pi * 0.5 / g.h if n == 2 else 256)

    def test_hits_axes(self):
        x = mesh.sphere_points(2, 0.25, 2 / 64)
        assert np.any(np.all(np.isclose(x, [0.25, 0.0], atol=1e-15), axis=-1))
        y = mesh.sphere_points(3, 0.25, 2 / 16)
        assert np.any(np.all(y == [0.0, 0.0, -0.25], axis=-1))

    def test_clipped_to_cube(self):
        x = mesh.sphere_points(2, 0.5, 0.1, centre=(0.8, 0.0))
        assert np.all(np.abs(x) <= 1.0)
