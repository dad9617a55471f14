import numpy as np
import pytest

from slipcontrol.boundary_layer import (
    EULERIAN,
    GENERIC,
    LAGRANGIAN,
    REDUCED,
    BoundaryLayerProfile,
    LayerCoefficients,
    build_layer_coefficients,
    diffuse,
    evolve_layer,
    init_layer,
    sample_layer_in_domain,
    step_layer,
)
from slipcontrol.errors import ConfigError, DomainSizeError, StepSizeError, UnsupportedScenarioError
from slipcontrol.euler_stage import build_envelope, build_potential_flow
from slipcontrol.geometry import DomainSpec, build_domain

T0, SIG = 0.5, 0.1


def kernel(env, s, z, t):
    """Gaussian in s translated by M(t) times the even heat kernel in z started at T0."""
    return np.exp(-((s - env.cumulative(t)) ** 2) / (2 * SIG**2)) * np.sqrt(T0 / (T0 + t)) * np.exp(-z**2 / (4 * (T0 + t)))


@pytest.fixture(scope="module")
def frictionless(rect64):
    env = build_envelope(1.0, 2.0)
    pf = build_potential_flow(rect64, env)
    return rect64, env, build_layer_coefficients(rect64, pf, 0.0)


def test_conveyor_coefficients(conveyor):
    d, env, pf = conveyor
    co = build_layer_coefficients(d, pf, 0.5)
    assert co.is_conveyor and co.uniform_speed == pytest.approx(1.0)
    inside = (co.s_nodes > 0.05) & (co.s_nodes < 1.95)
    # g0 = 2 (tau . D(u0) n + alpha tau . u0) with D(u0) = 0
    assert np.allclose(co.g0[:, inside], 1.0, atol=1e-8)
    assert np.abs(co.u0_flat).max() < 1e-8 and np.abs(co.stretch).max() < 1e-8


def test_translating_heat_kernel(frictionless):
    d, env, co = frictionless
    v = init_layer(d, frame=LAGRANGIAN, travel=3.0, values_fn=lambda S, Z, w: kernel(env, S, Z, 0.0))
    w = evolve_layer(v, co, None, 1.0, 1e-2)
    S, Z = np.meshgrid(w.s_grid, w.z_grid, indexing="ij")
    err = np.sqrt(w.with_values(w.values - kernel(env, S, Z, 1.0)[None]).l2_sq())
    assert err < 1e-3


def test_tangential_storage(frictionless):
    d, env, co = frictionless
    v = init_layer(d, frame=EULERIAN, values_fn=lambda S, Z, w: kernel(env, S, Z, 0.0))
    w = evolve_layer(v, co, None, 0.2, 1e-2)
    assert np.abs(w.normal_component()).max() == 0.0


@pytest.mark.parametrize("frame", [EULERIAN, LAGRANGIAN])
def test_generic_path_matches_reduced(frictionless, frame):
    d, env, co = frictionless
    v = init_layer(d, frame=frame, travel=3.0, values_fn=lambda S, Z, w: kernel(env, S, Z, 0.0))
    a = evolve_layer(v, co, None, 0.5, 1e-2, path=REDUCED)
    b = evolve_layer(v, co, None, 0.5, 1e-2, path=GENERIC)
    assert np.abs(a.values - b.values).max() < 1e-10


def test_pure_heat_conserves_mass(rect64):
    v = init_layer(rect64, values_fn=lambda S, Z, w: np.exp(-Z**2) + 0 * S)
    co = LayerCoefficients.constant(v.kind, v.walls, v.s_grid)
    w = evolve_layer(v, co, None, 1.0, 1e-2)
    m = lambda p: p.values @ p.z_weights()
    assert np.abs(m(w) - m(v)).max() < 1e-10


def test_neumann_flux_moment_identity():
    z = np.arange(0, 10.0001, 0.05)
    vals = np.exp(-z**2)[None, None].repeat(3, axis=1)
    vals[..., -1] = 0
    w = np.full(len(z), 0.05)
    w[[0, -1]] *= 0.5
    G = 0.3
    out = diffuse(vals, 0.05, 0.1, 0.5, flux=np.full((1, 3), G))
    assert np.allclose((out - vals) @ w, -G, atol=1e-12)


def test_step_size_errors(rect64):
    v = init_layer(rect64)
    co = LayerCoefficients.constant(v.kind, v.walls, v.s_grid)
    with pytest.raises(StepSizeError):
        step_layer(v, co, None, dt=0.0)
    with pytest.raises(StepSizeError):
        step_layer(v, co, None, dt=1.0, theta=0.0)


def test_truncation_watchdog(rect64):
    v = init_layer(rect64, z_max=2.0, h_z=0.05, values_fn=lambda S, Z, w: np.exp(-Z**2) + 0 * S)
    co = LayerCoefficients.constant(v.kind, v.walls, v.s_grid)
    with pytest.raises(DomainSizeError):
        evolve_layer(v, co, None, 2.0, 1e-2)


def test_one_sided_sigma_unsupported():
    d = build_domain(DomainSpec(sigma=("left",), nx=16, ny=16))
    with pytest.raises(UnsupportedScenarioError):
        init_layer(d)


def test_fast_grid_validation(rect64):
    with pytest.raises(ConfigError):
        init_layer(rect64, z_max=0.2, h_z=0.05)


def test_sampling_matches_formula(rect64):
    v = init_layer(rect64, values_fn=lambda S, Z, w: np.exp(-Z) + 0 * S)
    eps = 0.01
    a = sample_layer_in_domain(v, rect64, eps)
    g = rect64.grid
    j = 3
    y = g.y[j]
    chi = float(rect64.chi_at(np.array([1.0, y])))
    assert a.values[0, 32, j] == pytest.approx(np.sqrt(eps) * chi * np.exp(-y / np.sqrt(eps)), rel=1e-3)
    assert np.abs(a.values[1]).max() == 0.0


def test_profile_dump_roundtrip(tmp_path, rect64):
    v = init_layer(rect64, values_fn=lambda S, Z, w: np.exp(-Z) * np.cos(S))
    v.dump(tmp_path / "v.bin")
    w = BoundaryLayerProfile.load(tmp_path / "v.bin", v.kind, v.walls)
    assert np.array_equal(w.values, v.values)
