import math

import numpy as np
import pytest

from slipcontrol.boundary_layer import BoundaryLayerProfile, build_layer_coefficients, evolve_layer, init_layer, omega_wall_mask
from slipcontrol.errors import ConfigError, FeasibilityError, RangeError, ResolutionError
from slipcontrol.euler_stage import build_envelope, build_potential_flow
from slipcontrol.wpd import (
    compute_moments,
    design_kitchen_control,
    fit_slope,
    integrate_moments,
    laguerre_profiles,
    moment_dynamics,
    relax_heat,
)


@pytest.fixture(scope="module")
def layer_setup(conveyor):
    d, env, pf = conveyor
    return d, env, build_layer_coefficients(d, pf, 0.5)


def profile(f, h=0.1, z_max=400.0):
    z = np.arange(0, z_max + h / 2, h)
    vals = f(z)[None, None, :].repeat(2, axis=1)
    vals[..., -1] = 0
    return BoundaryLayerProfile(np.array([0.0, 1.0]), z, vals, 0.0, "rectangle", ("bottom",))


def test_moments_of_exponential():
    p = profile(lambda z: np.exp(-z), h=0.01, z_max=60.0)
    m = compute_moments(p, 3).values[0, 0]
    assert np.allclose(m, [math.factorial(k) for k in range(4)], rtol=1e-4)


def test_moment_tail_guard():
    p = profile(lambda z: np.exp(-z / 50), h=0.5, z_max=40.0)
    with pytest.raises(ResolutionError):
        compute_moments(p, 2)


def test_laguerre_profile_moments():
    z = np.arange(0, 40, 0.001)
    phi = laguerre_profiles(z, 3, scale=0.5)
    w = np.full(len(z), 0.001)
    w[0] *= 0.5
    # int z^k (z/l)^j e^{-z/l} / j! dz = l^{k+1} (j+k)! / j!
    for j in range(3):
        for k in range(3):
            exact = 0.5 ** (k + 1) * math.factorial(j + k) / math.factorial(j)
            assert (phi[j] * z**k) @ w == pytest.approx(exact, rel=1e-5)


@pytest.mark.parametrize("K", [0, 1, 2])
def test_design_cancels_moments(layer_setup, K):
    d, env, co = layer_setup
    v = init_layer(d, travel=3.0)
    ctrl = design_kitchen_control(co, None, env, 1.0, K, v, d, dt=1e-2)
    w = evolve_layer(v, co, ctrl, 1.0, 1e-2)
    mask = omega_wall_mask(d, w.s_grid)
    m = compute_moments(w, K).values[:, mask]
    free = compute_moments(evolve_layer(v, co, None, 1.0, 1e-2), K).values[:, mask]
    assert np.abs(m).max() < 1e-6
    assert np.abs(free[..., 0]).max() > 0.1


def test_design_rejects_large_K(layer_setup):
    d, env, co = layer_setup
    with pytest.raises(ConfigError):
        design_kitchen_control(co, None, env, 1.0, 3, init_layer(d, travel=3.0), d, k_max=2)


def test_design_infeasible_without_enough_mass(rect64):
    env = build_envelope(1.0, 1.0)
    co = build_layer_coefficients(rect64, build_potential_flow(rect64, env), 0.5)
    with pytest.raises(FeasibilityError, match=r"s"):
        design_kitchen_control(co, None, env, 1.0, 0, init_layer(rect64, travel=1.0), rect64, dt=1e-2)


def test_pde_moments_follow_ode(layer_setup):
    d, env, co = layer_setup
    dt, K = 5e-3, 2
    v = init_layer(d, travel=3.0)
    ctrl = design_kitchen_control(co, None, env, 1.0, 0, v, d, dt=dt)
    ts, traces = [0.0], [v.values[..., 0].copy()]

    def grab(u):
        ts.append(u.t)
        traces.append(u.values[..., 0].copy())

    w = evolve_layer(v, co, ctrl, 1.0, dt, callback=grab)
    ts, traces = np.array(ts), np.array(traces)

    def trace(t, X0):
        i = min(np.searchsorted(ts, t, side="right") - 1, len(ts) - 2)
        f = (t - ts[i]) / (ts[i + 1] - ts[i])
        return (1 - f) * traces[i] + f * traces[i + 1]

    dyn = moment_dynamics(co, ctrl, K, trace=trace)
    X0 = np.broadcast_to(v.s_grid, (2, len(v.s_grid)))
    mo = integrate_moments(dyn, np.zeros((2, len(v.s_grid), K + 1)), X0, 0.0, 1.0, n_steps=int(round(2 / dt)))
    assert np.abs(mo - compute_moments(w, K).values).max() < 1e-5


def test_relax_conserves_mass_and_decays():
    r = relax_heat(profile(lambda z: np.exp(-z**2)), (0, 1000), np.geomspace(1, 1000, 30))
    assert np.abs(r.moments[:, 0] - r.moments[0, 0]).max() < 1e-10 * abs(r.moments[0, 0])
    assert r.slope == pytest.approx(-0.25, abs=0.05)
    assert np.all(np.diff(r.l2) < 0)


def test_fit_slope_power_law():
    t = np.geomspace(1, 1e4, 50)
    s, res = fit_slope(t, 3 * t**-0.7, (10, 1000))
    assert s == pytest.approx(-0.7, abs=1e-12) and res < 1e-12


def test_fit_slope_needs_window_points():
    with pytest.raises(RangeError):
        fit_slope(np.array([1.0, 2.0]), np.array([1.0, 0.5]), (10, 1000))
