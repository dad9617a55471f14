import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slipcontrol.errors import DataError, ShapeError
from slipcontrol.fields import (
    BoundaryField,
    Grid,
    ScalarField,
    VectorField,
    curl2d,
    div,
    dump_binary,
    grad,
    leray_project,
    load_binary,
    normal_trace,
    perp_grad,
    read_csv,
    solve_dirichlet_poisson,
    solve_neumann_poisson,
    to_csv,
    velocity_from_vorticity,
)

BOX = Grid.box(0, 2, 0, 1, 32, 16)


def test_grad_exact_on_quadratics():
    f = ScalarField.from_function(BOX, lambda x, y: x**2 + 3 * x * y - y**2)
    g = grad(f)
    X, Y = np.meshgrid(BOX.x, BOX.y, indexing="ij")
    assert np.allclose(g.values[0], 2 * X + 3 * Y, atol=1e-12)
    assert np.allclose(g.values[1], 3 * X - 2 * Y, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=6, max_size=6))
def test_perp_grad_is_divergence_free(c):
    psi = ScalarField.from_function(
        BOX, lambda x, y: c[0] * np.sin(x + c[1]) * np.cos(2 * y) + c[2] * x**3 * y + c[3] * np.exp(c[4] * x * y / 4) + c[5]
    )
    assert div(perp_grad(psi)).max_abs() < 1e-10 * (1 + perp_grad(psi).max_abs()) * 32


def test_neumann_poisson_cosine_mode():
    k = np.pi
    rhs = ScalarField.from_function(BOX, lambda x, y: -2 * k**2 * np.cos(k * x) * np.cos(k * y))
    s = solve_neumann_poisson(BOX, rhs, BoundaryField.zeros(BOX))
    exact = np.cos(k * BOX.points()[..., 0]) * np.cos(k * BOX.points()[..., 1])
    assert np.max(np.abs(s.values - exact)) < 5e-3


def test_neumann_incompatible_data():
    with pytest.raises(DataError):
        solve_neumann_poisson(BOX, ScalarField.from_function(BOX, lambda x, y: 1 + 0 * x), BoundaryField.zeros(BOX))


def test_dirichlet_poisson_harmonic_exact():
    u = lambda x, y: x**2 - y**2 + 2 * x
    b = BoundaryField.from_function(BOX, lambda x, y, nx, ny: u(x, y))
    s = solve_dirichlet_poisson(BOX, ScalarField.zeros(BOX), b)
    assert np.max(np.abs(s.values - u(*np.moveaxis(BOX.points(), -1, 0)))) < 1e-10


def test_velocity_from_vorticity_trace_and_curl():
    g = Grid.box(0, 2, 0, 1, 128, 64)
    om = ScalarField.from_function(g, lambda x, y: np.exp(-((x - 1) ** 2 + (y - 0.5) ** 2) / 0.02))
    u = velocity_from_vorticity(g, om, BoundaryField.zeros(g))
    assert div(u).max_abs() < 1e-9
    tr = normal_trace(u)
    assert max(np.abs(v).max() for v in tr.walls.values()) < 1e-10
    inner = (slice(8, -8), slice(8, -8))
    assert np.max(np.abs(curl2d(u).values[inner] - om.values[inner])) < 0.05 * om.max_abs()


def test_nonzero_net_flux_rejected():
    b = BoundaryField.from_function(BOX, lambda x, y, nx, ny: 1.0 + 0 * x)
    with pytest.raises(DataError):
        velocity_from_vorticity(BOX, ScalarField.zeros(BOX), b)


def test_leray_removes_gradients(rect64):
    g = rect64.grid
    phi = ScalarField.from_function(g, lambda x, y: np.cos(np.pi * x) * np.cos(np.pi * y))
    psi = ScalarField.from_function(g, lambda x, y: np.sin(np.pi * x / 2) ** 2 * np.sin(np.pi * y) ** 2)
    v = perp_grad(psi) + grad(phi)
    p = leray_project(rect64, v)
    assert div(p).max_abs() < 1e-9
    assert np.max(np.abs(p.values - perp_grad(psi).values)) < 0.05


def test_field_shape_mismatch():
    with pytest.raises(ShapeError):
        ScalarField(BOX, np.zeros((3, 3)))


def test_csv_and_binary_roundtrip(tmp_path):
    v = VectorField.from_function(BOX, lambda x, y: (np.sin(x), x * y))
    to_csv(v, tmp_path / "v.csv")
    w = read_csv(tmp_path / "v.csv", BOX)
    assert np.array_equal(v.values, w.values)
    dump_binary(v.values, tmp_path / "v.bin")
    assert np.array_equal(load_binary(tmp_path / "v.bin", v.values.shape), v.values)


def test_polar_grid_weights_area():
    g = Grid.disk(32, 128)
    assert g.weights().sum() == pytest.approx(np.pi, rel=1e-12)
