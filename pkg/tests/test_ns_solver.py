import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slipcontrol.errors import StepSizeError, UnsupportedScenarioError
from slipcontrol.fields import VectorField
from slipcontrol.ns_solver import (
    CONTROLLED,
    UNCONTROLLED,
    ControlTrace,
    MACGrid,
    ViscousState,
    balance_trace,
    mac_divergence,
    navier_operator,
    project_mac,
    state_from_nodes,
    step_viscous,
)

CHANNEL = MACGrid(1.0, 16, 64, periodic=True)
BOX = MACGrid(2.0, 64, 32)


def swirl(a, b, c):
    """Smooth tangential field in the box, scaled by the three amplitudes."""
    return lambda x, y: (
        a * np.sin(np.pi * x / 2) ** 2 * np.cos(np.pi * y) + b * np.sin(np.pi * x) * np.sin(2 * np.pi * y),
        c * np.sin(np.pi * x) * np.sin(np.pi * y) ** 2,
    )


def test_single_mode_decay_rate():
    eps, k, dt, n = 0.05, 2 * np.pi, 2.5e-3, 400
    st_ = ViscousState.from_function(CHANNEL, lambda x, y: (np.cos(k * y) + 0 * x, 0 * x), eps)
    a0 = np.abs(st_.u).max()
    for _ in range(n):
        st_ = step_viscous(st_, None, dt)
    rate = -np.log(np.abs(st_.u).max() / a0) / (n * dt)
    assert rate == pytest.approx(eps * k**2, rel=0.02)


@pytest.mark.parametrize("alpha", [0.2, 0.7, 3.0])
def test_navier_channel_fixed_point(alpha):
    eps, G = 0.05, 0.3
    # -eps u'' = G, u'(0) = 2 alpha u(0), symmetric about y = 1/2
    prof = lambda x, y: (G / (2 * eps) * y * (1 - y) + G / (4 * alpha * eps) + 0 * x, 0 * x)
    st_ = ViscousState.from_function(CHANNEL, prof, eps, alpha, project=False)
    u0 = st_.u.copy()
    for _ in range(50):
        st_ = step_viscous(st_, None, 0.01, forcing=(G, 0.0), cfl_max=1e3)
    assert np.abs(st_.u - u0).max() < 1e-6 * np.abs(u0).max()


@settings(max_examples=8, deadline=None)
@given(st.floats(0.2, 3.0), st.floats(-1, 1), st.floats(-1, 1), st.floats(0.0, 2.0))
def test_energy_non_increasing(a, b, c, alpha):
    st_ = ViscousState.from_function(BOX, swirl(a, b, c), 0.01, alpha)
    e = [st_.energy()]
    for _ in range(20):
        st_ = step_viscous(st_, None, 0.02)
        e.append(st_.energy())
    assert np.all(np.diff(e) <= 1e-12 * e[0])


def test_scaling_invariance():
    eps, T, n = 0.1, 0.5, 20
    base = ViscousState.from_function(BOX, swirl(2.0, 0.5, 0.3), 1.0, 0.5)
    unscaled = base.copy()
    for _ in range(n):
        unscaled = step_viscous(unscaled, None, T / n)
    scaled = ViscousState(BOX, eps * base.u, eps * base.v, base.p.copy(), 0.0, eps, 0.5)
    for _ in range(n):
        scaled = step_viscous(scaled, None, T / eps / n, cfl_max=1e3)
    assert np.abs(scaled.u / eps - unscaled.u).max() < 1e-10 * np.abs(unscaled.u).max()


def test_projection_is_exact_and_idempotent():
    st_ = ViscousState.from_function(BOX, lambda x, y: (x * (2 - x) * y, np.sin(3 * x) * y * (1 - y)), 0.1, project=False)
    u, v, _ = project_mac(BOX, st_.u, st_.v)
    assert np.abs(mac_divergence(BOX, u, v)).max() < 1e-9
    u2, v2, _ = project_mac(BOX, u, v)
    assert np.abs(u2 - u).max() < 1e-10 and np.abs(v2 - v).max() < 1e-10


def test_rest_stays_at_rest():
    st_ = ViscousState.zeros(BOX, 0.05, 0.0)
    for _ in range(5):
        st_ = step_viscous(st_, None, 0.1)
    assert st_.norm() == 0.0


def test_uniform_through_flow_with_frictionless_walls():
    eps = 0.05
    st_ = ViscousState.from_function(BOX, lambda x, y: (1.0 + 0 * x, 0 * x), eps, 0.0)
    tr = ControlTrace(CONTROLLED, np.ones(BOX.ny), np.zeros(BOX.ny + 1), np.ones(BOX.ny), np.zeros(BOX.ny + 1))
    for _ in range(10):
        st_ = step_viscous(st_, tr, 0.01)
    assert np.abs(st_.u - 1.0).max() < 1e-10 and np.abs(st_.v).max() < 1e-10


def test_balance_trace_removes_net_flux():
    tr = ControlTrace(CONTROLLED, np.full(BOX.ny, 1.0), np.zeros(BOX.ny + 1), np.full(BOX.ny, 1.3), np.zeros(BOX.ny + 1))
    b = balance_trace(tr, BOX)
    assert BOX.hy * (b.right_u.sum() - b.left_u.sum()) == pytest.approx(0.0, abs=1e-14)


def test_cfl_and_step_errors():
    st_ = ViscousState.from_function(BOX, swirl(5.0, 0, 0), 0.1)
    with pytest.raises(StepSizeError):
        step_viscous(st_, None, 1.0)
    with pytest.raises(StepSizeError):
        step_viscous(st_, None, -1e-3)


def test_periodic_channel_rejects_control():
    st_ = ViscousState.zeros(CHANNEL, 0.1)
    tr = ControlTrace(CONTROLLED, np.zeros(64), np.zeros(65), np.zeros(64), np.zeros(65))
    with pytest.raises(UnsupportedScenarioError):
        step_viscous(st_, tr, 0.01)


def test_mode_log_records_uncontrolled_path():
    st_ = ViscousState.from_function(BOX, swirl(1, 0, 0), 0.1)
    st_ = step_viscous(step_viscous(st_, None, 0.01), ControlTrace.uncontrolled(), 0.01)
    assert st_.mode_log == [UNCONTROLLED, UNCONTROLLED]


def test_navier_operator_oracles(rect64):
    g = rect64.grid
    shear = VectorField.from_function(g, lambda x, y: (y, 0 * y))
    out = navier_operator(shear, rect64, 0.0)
    assert np.allclose(out["bottom"][:, 0], -0.5) and np.allclose(out["bottom"][:, 1], 0.0)
    const = VectorField.from_function(g, lambda x, y: (2.0 + 0 * x, 0 * x))
    out = navier_operator(const, rect64, 0.3)
    assert np.allclose(out["bottom"][:, 0], 0.6) and np.allclose(out["top"][:, 0], 0.6)


def test_node_roundtrip(rect64):
    g = MACGrid(2.0, 64, 64)
    f = VectorField.from_function(rect64.grid, lambda x, y: (np.sin(np.pi * x / 2) * np.cos(np.pi * y), 0 * x))
    st_ = state_from_nodes(g, f, 0.1, project=False)
    back = st_.to_nodes(rect64.grid)
    inner = (slice(2, -2), slice(2, -2))
    assert np.abs(back.values[0][inner] - f.values[0][inner]).max() < 2e-3
