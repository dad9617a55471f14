import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import brentq

from slipcontrol.errors import ConfigError, DataError
from slipcontrol.euler_stage import (
    build_envelope,
    build_potential_flow,
    default_flux,
    flush_seeds,
    solve_u1,
    still_flow,
    trace_flow,
    verify_null,
)
from slipcontrol.fields import BoundaryField, neumann_laplacian, ScalarField, curl2d, div, normal_trace, velocity_from_vorticity
from slipcontrol.geometry import DomainSpec, build_domain


def blob(domain, amp=10.0, x0=1.0, width=0.1):
    g = domain.grid
    om = ScalarField.from_function(g, lambda x, y: amp * np.exp(-((x - x0) ** 2 + (y - 0.5) ** 2) / (2 * width**2)))
    return velocity_from_vorticity(g, om, BoundaryField.zeros(g))


@pytest.mark.parametrize("profile", ["sine", "bump"])
def test_envelope_mass_and_ends(profile):
    env = build_envelope(1.0, 3.0, profile)
    assert quad(lambda t: float(env.eta(t)), 0, 1, epsabs=1e-13)[0] == pytest.approx(3.0, abs=1e-10)
    assert env.eta(0.0) == 0.0 and abs(env.eta(1.0)) < 1e-14
    assert env.cumulative(1.0) == pytest.approx(3.0, abs=1e-12)


def test_sine_envelope_formula():
    env = build_envelope(1.0, 3.0)
    t = np.linspace(0, 1, 11)
    assert np.allclose(env.eta(t), 1.5 * np.pi * np.sin(np.pi * t))


@pytest.mark.parametrize("mass", [0.0, -1.0])
def test_envelope_rejects_bad_mass(mass):
    with pytest.raises(ConfigError):
        build_envelope(1.0, mass)


def test_conveyor_is_uniform(conveyor):
    d, env, pf = conveyor
    assert np.allclose(pf.grad_alpha.values[0], 1.0, atol=1e-9)
    assert np.allclose(pf.grad_alpha.values[1], 0.0, atol=1e-9)


def test_flush_exit_time_matches_quadrature(conveyor):
    d, env, pf = conveyor
    seeds = np.array([[0.25, 0.5], [1.0, 0.3], [1.9, 0.7]])
    rep = trace_flow(pf, seeds, 1.0, dt=1e-3)
    for (x0, _), te in zip(seeds, rep.exit_times):
        exact = brentq(lambda t: float(env.cumulative(t)) - (2.0 - x0), 0.0, 1.0)
        assert te == pytest.approx(exact, abs=1e-8)
    assert rep.flushed


def test_insufficient_mass_not_flushed(rect64):
    pf = build_potential_flow(rect64, build_envelope(1.0, 1.0))
    rep = trace_flow(pf, np.array([[0.1, 0.5], [1.5, 0.5]]), 1.0, dt=1e-2)
    assert not rep.flushed and np.isinf(rep.exit_times[0]) and np.isfinite(rep.exit_times[1])


def test_u1_translation_oracle(conveyor):
    d, env, pf = conveyor
    u = blob(d, x0=0.5)
    tr = solve_u1(d, pf, u, 1.0, n_samples=11)
    om0 = curl2d(u).values
    # blob centre at time t sits at 0.5 + M(t); compare the vorticity before it exits
    k = 2
    t = tr.times[k]
    shift = float(env.cumulative(t))
    ix = int(round(shift / d.grid.hx))
    assert abs(ix * d.grid.hx - shift) < 0.02
    om_t = curl2d(tr.fields[k]).values
    peak = np.unravel_index(np.argmax(np.abs(om_t)), om_t.shape)
    assert abs(d.grid.x[peak[0]] - (0.5 + shift)) <= 2 * d.grid.hx
    assert np.abs(om_t).max() == pytest.approx(np.abs(om0).max(), rel=0.1)


def test_u1_reaches_null_when_flushed(conveyor):
    d, env, pf = conveyor
    tr = solve_u1(d, pf, blob(d), 1.0)
    assert verify_null(tr.final) < 1e-10
    assert np.isfinite(tr.flush_time)


def test_u1_not_null_without_flushing(rect64):
    pf = build_potential_flow(rect64, build_envelope(1.0, 1.0))
    tr = solve_u1(rect64, pf, blob(rect64), 1.0)
    assert verify_null(tr.final) > 0.1 and np.isinf(tr.flush_time)


def test_u1_around_rest_is_constant(rect64):
    u = blob(rect64)
    tr = solve_u1(rect64, still_flow(rect64), u, 1.0)
    assert np.allclose(tr.omega_final.values, curl2d(u).values, atol=1e-10)


def test_u1_fields_divergence_free_and_tangent(conveyor):
    d, env, pf = conveyor
    tr = solve_u1(d, pf, blob(d), 1.0, n_samples=5)
    for f in tr.fields:
        # extended-domain fields are exactly solenoidal away from the cut at the controlled walls
        assert np.abs(div(f).values[2:-2]).max() < 1e-8
        tr_b = normal_trace(f)
        for wall in ("bottom", "top"):
            assert np.abs(tr_b.walls[wall]).max() < 1e-8


def test_u1_rejects_divergent_data(conveyor):
    d, env, pf = conveyor
    from slipcontrol.fields import VectorField

    bad = VectorField.from_function(d.grid, lambda x, y: (x, 0 * y))
    with pytest.raises(DataError):
        solve_u1(d, pf, bad, 1.0)


def test_disk_potential_is_discretely_harmonic():
    d = build_domain(DomainSpec("disk", sigma=np.pi / 4, nx=16, ny=64))
    pf = build_potential_flow(d, build_envelope(1.0, 3.0))
    flux = default_flux(d)
    assert neumann_laplacian(pf.alpha_pot, flux).max_abs() < 1e-8
    rep = trace_flow(pf, flush_seeds(d, n=3), 1.0, dt=5e-2)
    assert rep.exit_times.shape == (len(rep.seeds),)
