"""Well-prepared dissipation: layer moments, kitchen source design, free decay.

Moments are ``m_k(s) = int z^k v(s, z) dz`` (trapezoid on the z-grid).
Integrating the layer equation against ``z^k`` gives, along the conveyor
characteristics,

    dm_0/dt = -g + int zeta,
    dm_1/dt = v(z=0) + int z zeta,
    dm_k/dt = k (k - 1) m_{k-2} + int z^k zeta      (k >= 2).

The discrete z-operator reproduces these identities exactly (up to the
truncation tail), which is what makes an exact discrete design possible.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .boundary_layer import (
    LAGRANGIAN,
    BoundaryLayerProfile,
    LayerCoefficients,
    check_decay,
    diffuse,
    kitchen_extent,
    omega_wall_mask,
    sample_layer_in_domain,
)
from .errors import (
    BasisError,
    ConfigError,
    DataError,
    FeasibilityError,
    RangeError,
    ResolutionError,
    UnsupportedScenarioError,
)
from .fields import dump_binary
from .geometry import Domain

K_MAX_DEFAULT = 2
TOL_MOMENT = 1e-6


# ---------------------------------------------------------------------------
# moments


@dataclass
class MomentVector:
    """``values[wall, s, k]`` for ``k = 0..K`` at wall positions ``s``."""

    s: np.ndarray
    values: np.ndarray
    K: int
    quad_error: float

    def __getitem__(self, k):
        return self.values[..., k]


def _z_moment_weights(z, K):
    w = np.full(len(z), z[1] - z[0])
    w[[0, -1]] *= 0.5
    return np.stack([w * z**k for k in range(K + 1)])


def compute_moments(v: BoundaryLayerProfile, K, tail_tol=1e-8) -> MomentVector:
    """Trapezoid moments up to order ``K`` with a Richardson-type error estimate."""
    if int(K) != K or K < 0:
        raise ConfigError(f"moment order K must be a non-negative integer, got {K}")
    K = int(K)
    z = v.z_grid
    W = _z_moment_weights(z, K)
    vals = np.einsum("wsz,kz->wsk", v.values, W)
    peak = float(np.max(np.abs(v.values))) if v.values.size else 0.0
    tail = float(np.max(np.abs(v.values[..., -2]))) if v.values.size else 0.0
    if peak > 0 and tail * z[-1] ** (K + 1) > tail_tol * max(peak, 1.0) * max(1.0, math.factorial(K)):
        raise ResolutionError(f"z-grid too short for moment order {K}: weighted tail {tail * z[-1] ** (K + 1):.3e}")
    # trapezoid on every other node; the difference estimates the error
    err = 0.0
    if (len(z) - 1) % 2 == 0 and len(z) > 4:
        W2 = _z_moment_weights(z[::2], K)
        coarse = np.einsum("wsz,kz->wsk", v.values[..., ::2], W2)
        err = float(np.max(np.abs(coarse - vals))) / 3.0 if vals.size else 0.0
    s = np.broadcast_to(v.s_grid, v.values.shape[:2]).copy()
    return MomentVector(s, vals, K, err)


# ---------------------------------------------------------------------------
# kitchen source


def _bump_antiderivative(x):
    """Antiderivative of ``(1 - x^2)^4`` normalized to rise from 0 to 1 on ``[-1, 1]``."""
    x = np.clip(x, -1.0, 1.0)
    F = x - 4 * x**3 / 3 + 6 * x**5 / 5 - 4 * x**7 / 7 + x**9 / 9
    return 0.5 + F * (315.0 / 256.0)


def laguerre_profiles(z, n, scale=0.5):
    """``(z / scale)^j exp(-z / scale) / j!`` for ``j < n``."""
    x = np.asarray(z, dtype=float) / scale
    return np.stack([x**j * np.exp(-x) / math.factorial(j) for j in range(n)])


@dataclass
class KitchenControl:
    """Source ``zeta = eta(t) b(s) sum_j A_j(X0) phi_j(z)`` in the kitchen.

    ``b`` is a normalized smooth bump on ``support``; ``X0 = s - a M(t)`` is
    the characteristic label (position at ``t = 0``); ``amplitudes`` are
    given on ``labels`` per wall.
    """

    support: tuple
    labels: np.ndarray
    amplitudes: np.ndarray
    z_grid: np.ndarray
    scale: float = 0.5
    speed: float = 1.0
    envelope: object = None
    moments: tuple = ()
    moment_budget: np.ndarray = field(default=None)

    @property
    def n_basis(self):
        return self.amplitudes.shape[-1]

    def profiles(self, z=None):
        return laguerre_profiles(self.z_grid if z is None else z, self.n_basis, self.scale)

    def bump(self, s):
        a, b = self.support
        x = (2 * np.asarray(s, dtype=float) - a - b) / (b - a)
        return np.where(np.abs(x) < 1, (1 - x**2) ** 4, 0.0) * (315.0 / 256.0) * 2 / (b - a)

    def bump_integral(self, s0, s1):
        """``int_{s0}^{s1} b``."""
        a, b = self.support
        f = lambda s: _bump_antiderivative((2 * np.asarray(s, dtype=float) - a - b) / (b - a))
        return f(s1) - f(s0)

    def amplitude_at(self, X0):
        """Amplitudes at labels ``X0`` (shape ``(n_walls, n)``), zero off the label range."""
        out = np.empty(np.shape(X0) + (self.n_basis,))
        for w in range(self.amplitudes.shape[0]):
            for j in range(self.n_basis):
                out[w, ..., j] = np.interp(X0[w], self.labels, self.amplitudes[w, :, j], left=0.0, right=0.0)
        return out

    def crossing(self, X0, t0, t1):
        """``int_{t0}^{t1} eta b(X0 + a M(t)) dt`` for labels ``X0``."""
        M0, M1 = float(self.envelope.cumulative(t0)), float(self.envelope.cumulative(t1))
        a = self.speed
        if a == 0.0:
            return self.bump(X0) * (M1 - M0)
        lo, hi = X0 + a * M0, X0 + a * M1
        return self.bump_integral(lo, hi) / a

    def step_amount(self, v, coeffs, t0, t1, s_start, moving):
        """Time integral of the source over a step, shaped like ``v.values``."""
        M0 = float(self.envelope.cumulative(t0))
        prof = self.profiles(v.z_grid)
        if moving:
            X0 = s_start - self.speed * M0
            weight = self.crossing(X0, t0, t1)
            return np.einsum("wsj,ws,jz->wsz", self.amplitude_at(X0), weight, prof)
        from .boundary_layer import _GAUSS_W, _GAUSS_X

        total = np.zeros(v.values.shape)
        for xq, wq in zip(_GAUSS_X, _GAUSS_W):
            tq = t0 + xq * (t1 - t0)
            X0 = s_start - self.speed * float(self.envelope.cumulative(tq))
            amp = self.amplitude_at(X0) * (float(self.envelope.eta(tq)) * self.bump(s_start))[..., None]
            total += wq * np.einsum("wsj,jz->wsz", amp, prof)
        return total * (t1 - t0)

    def values_at(self, t, s):
        """Source samples ``(n_walls, n_s, n_z)`` at time ``t`` and wall positions ``s``."""
        X0 = np.asarray(s, dtype=float) - self.speed * float(self.envelope.cumulative(t))
        amp = self.amplitude_at(X0) * (float(self.envelope.eta(t)) * self.bump(s))[..., None]
        return np.einsum("wsj,jz->wsz", amp, self.profiles())

    def cost(self, T, n_t=400):
        """``int_0^T int int |zeta|^2 dz ds dt`` (label coordinates, Gauss in time)."""
        prof = self.profiles()
        w = np.full(len(self.z_grid), self.z_grid[1] - self.z_grid[0])
        w[[0, -1]] *= 0.5
        Q = np.einsum("iz,jz,z->ij", prof, prof, w)
        x, wx = np.polynomial.legendre.leggauss(8)
        edges = np.linspace(0.0, T, n_t + 1)
        energy = np.zeros(len(self.labels))
        for a, b in zip(edges[:-1], edges[1:]):
            for xq, wq in zip(x, wx):
                tq = 0.5 * (a + b) + 0.5 * (b - a) * xq
                pos = self.labels + self.speed * float(self.envelope.cumulative(tq))
                energy += 0.5 * (b - a) * wq * (float(self.envelope.eta(tq)) * self.bump(pos)) ** 2
        h = self.labels[1] - self.labels[0]
        quad = np.einsum("wsi,ij,wsj->ws", self.amplitudes, Q, self.amplitudes)
        return float(np.sum(quad * energy[None]) * h)

    def dump(self, path):
        """Binary checkpoint: labels then amplitudes (walls x labels x basis)."""
        head = np.array([*self.amplitudes.shape, *self.support, self.scale, self.speed])
        dump_binary(np.concatenate([head, self.labels, self.amplitudes.ravel()]), path)


def kitchen_support(domain: Domain, speed, inner=0.1, outer=0.9):
    """Sub-interval of the upstream kitchen, strictly away from the domain wall."""
    lo, hi = kitchen_extent(domain)
    L = domain.spec.length
    if speed >= 0:
        if lo >= 0:
            raise FeasibilityError("no kitchen upstream of the wall (left side not controlled)")
        d = -lo
        return (-outer * d, -inner * d)
    if hi <= L:
        raise FeasibilityError("no kitchen upstream of the wall (right side not controlled)")
    d = hi - L
    return (L + inner * d, L + outer * d)


# ---------------------------------------------------------------------------
# moment dynamics


@dataclass
class MomentDynamics:
    """Right-hand sides of the moment ODEs along the conveyor characteristics.

    ``rhs(t, m, X0)`` returns ``dm/dt`` for labels ``X0`` (shape ``(n_walls, n)``)
    and moments ``m`` (shape ``(n_walls, n, K + 1)``).  ``trace(t, X0)``
    supplies ``v(t, z = 0)``, required for the odd orders.
    """

    coeffs: LayerCoefficients
    zeta: KitchenControl | None
    K: int
    trace: object = None

    def position(self, t, X0):
        return X0 + self.coeffs.uniform_speed * float(self.coeffs.envelope.cumulative(t))

    def g(self, t, X0):
        return float(self.coeffs.g_envelope.eta(t)) * self.coeffs.sample("g0", self.position(t, X0))

    def source_moments(self, t, X0):
        """``int z^k zeta dz`` for ``k = 0..K``, shape ``(n_walls, n, K + 1)``."""
        out = np.zeros(np.shape(X0) + (self.K + 1,))
        if self.zeta is None:
            return out
        W = _z_moment_weights(self.zeta.z_grid, self.K)
        P = W @ self.zeta.profiles().T  # (K+1, n_basis)
        s = self.position(t, X0)
        amp = self.zeta.amplitude_at(X0) * (float(self.zeta.envelope.eta(t)) * self.zeta.bump(s))[..., None]
        return np.einsum("wsj,kj->wsk", amp, P)

    def rhs(self, t, m, X0):
        d = self.source_moments(t, X0)
        d[..., 0] -= self.g(t, X0)
        for k in range(1, self.K + 1):
            if k == 1:
                if self.trace is None:
                    raise DataError("the first moment needs the wall trace v(z=0) (trace closure)")
                d[..., 1] += self.trace(t, X0)
            else:
                d[..., k] += k * (k - 1) * m[..., k - 2]
        return d


def moment_dynamics(coeffs: LayerCoefficients, zeta: KitchenControl | None, K, trace=None) -> MomentDynamics:
    if not coeffs.is_conveyor:
        raise UnsupportedScenarioError("moment dynamics are validated for the conveyor scenario only")
    if int(K) != K or K < 0:
        raise ConfigError(f"moment order K must be a non-negative integer, got {K}")
    return MomentDynamics(coeffs, zeta, int(K), trace)


def integrate_moments(dyn: MomentDynamics, m0, X0, t0, t1, n_steps=400, rtol=None):
    """Integrate the moment ODEs from ``t0`` to ``t1`` for all labels at once.

    Classical RK4 on ``n_steps`` uniform steps (align them with the layer
    steps when a piecewise-linear trace is supplied); with ``rtol`` set, an
    adaptive DOP853 run is used instead.
    """
    shape = np.shape(m0)
    y = np.asarray(m0, dtype=float)
    if rtol is not None:
        sol = solve_ivp(lambda t, u: dyn.rhs(t, u.reshape(shape), X0).ravel(), (t0, t1), y.ravel(),
                        method="DOP853", rtol=rtol, atol=rtol * 1e-2)
        if not sol.success:
            raise DataError(f"moment ODE integration failed: {sol.message}")
        return sol.y[:, -1].reshape(shape)
    h = (t1 - t0) / n_steps
    t = t0
    for _ in range(n_steps):
        k1 = dyn.rhs(t, y, X0)
        k2 = dyn.rhs(t + h / 2, y + h / 2 * k1, X0)
        k3 = dyn.rhs(t + h / 2, y + h / 2 * k2, X0)
        k4 = dyn.rhs(t + h, y + h * k3, X0)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return y


# ---------------------------------------------------------------------------
# design


def _step_grid(T, dt):
    n = max(1, int(math.ceil(T / dt - 1e-9)))
    return np.linspace(0.0, T, n + 1)


def design_kitchen_control(coeffs: LayerCoefficients, g0_history, envelope, T, K, layer: BoundaryLayerProfile,
                           domain: Domain, dt=1e-2, theta=0.5, scale=0.5, k_max=K_MAX_DEFAULT,
                           support=None, tol_cover=1e-9) -> KitchenControl:
    """Kitchen source cancelling ``m_0..m_K`` at time ``T`` on the domain wall.

    The bookkeeping replays the discrete moment recursion of ``step_layer``
    (same steps, same theta, same flux and source quadratures) for every
    Lagrangian label, so the re-simulated moments vanish to round-off.  Odd
    orders need the wall trace; it is obtained by running the ``z``-problem
    for the free response and for each basis response (linear
    superposition, no ``s`` coupling in the conveyor frame).

    ``g0_history`` optionally overrides the per-step Neumann amounts
    ``int g dt`` (shape ``(n_steps, n_walls, n_labels)``).
    """
    if int(K) != K or K < 0:
        raise ConfigError(f"moment order K must be a non-negative integer, got {K}")
    K = int(K)
    if K > k_max:
        raise ConfigError(f"K = {K} exceeds K_max = {k_max}; the full layer cannot be controlled")
    if K > 3:
        raise ConfigError("moment recursion is closed up to order 3")
    if not coeffs.is_conveyor:
        raise UnsupportedScenarioError("kitchen design is validated for the conveyor scenario only")
    if layer.frame != LAGRANGIAN or layer.t != 0.0:
        raise DataError("design needs a Lagrangian layer template at t = 0")
    a = coeffs.uniform_speed
    support = support if support is not None else kitchen_support(domain, a)
    labels = layer.s_grid.copy()
    nw, ns = len(layer.walls), len(labels)
    nb = K + 1
    amps0 = np.zeros((nw, ns, nb))
    ctrl = KitchenControl(tuple(support), labels, amps0, layer.z_grid.copy(), scale, a, envelope, tuple(range(K + 1)))
    lo, hi = kitchen_extent(domain)
    if not (lo <= support[0] < support[1] <= hi) or np.any(omega_wall_mask(domain, np.array(support))):
        raise FeasibilityError(f"kitchen support {support} is not inside the kitchen")

    times = _step_grid(T, dt)
    n_steps = len(times) - 1
    X0 = np.broadcast_to(labels, (nw, ns))
    # per-step Neumann amounts and crossing weights
    if g0_history is not None:
        G = np.asarray(g0_history, dtype=float)
        if G.shape != (n_steps, nw, ns):
            raise DataError(f"g0_history has shape {G.shape}, expected {(n_steps, nw, ns)}")
    else:
        G = np.stack([coeffs.g_step(t0, t1, X0 + a * float(envelope.cumulative(t0)), True)
                      for t0, t1 in zip(times[:-1], times[1:])])
    B = np.stack([ctrl.crossing(X0, t0, t1) for t0, t1 in zip(times[:-1], times[1:])])

    cover = B.sum(axis=0)
    final = X0 + a * float(envelope.cumulative(T))
    target = omega_wall_mask(domain, final)
    bad = target & (np.abs(cover - 1.0) > tol_cover)
    if np.any(bad):
        s_bad = final[bad]
        raise FeasibilityError(
            f"characteristics ending at s in [{s_bad.min():.3f}, {s_bad.max():.3f}] never cross the kitchen "
            f"support {support}; increase the conveyor mass"
        )

    W = _z_moment_weights(layer.z_grid, K)
    P = W @ ctrl.profiles().T  # (K+1, nb) discrete basis moments
    if abs(np.linalg.det(P)) < 1e-12 * np.abs(P).max() ** nb:
        raise BasisError("injected-profile moment matrix is singular")

    # response moments: index 0 = free (Neumann only), 1..nb = basis j with unit amplitude
    resp = np.zeros((nb + 1, nw, ns, K + 1))
    resp[0] = compute_moments(layer, K).values
    traces = _trace_responses(layer, G, B, ctrl.profiles(), times, theta) if K >= 1 else None
    dts = np.diff(times)
    for n in range(n_steps):
        old = resp.copy()
        resp[0, ..., 0] -= G[n]
        resp[1:] += B[n][None, ..., None] * P.T[:, None, None, :]
        for k in range(1, K + 1):
            if k == 1:
                rate = theta * traces[n + 1] + (1 - theta) * traces[n]
            else:
                rate = k * (k - 1) * (theta * resp[..., k - 2] + (1 - theta) * old[..., k - 2])
            resp[..., k] += dts[n] * rate
    m_free = resp[0]
    R = np.moveaxis(resp[1:], 0, -1)  # (nw, ns, K+1, nb)
    amps = np.zeros((nw, ns, nb))
    ok = cover > 0.5
    if np.any(ok):
        amps[ok] = np.linalg.solve(R[ok], -m_free[ok][..., None])[..., 0]
    ctrl.amplitudes = amps
    ctrl.moment_budget = np.einsum("kj,wsj->wsk", P, amps)
    return ctrl


def _trace_responses(layer, G, B, prof, times, theta):
    """Wall traces ``v(z=0)`` at every step time for the free and basis responses."""
    nb = prof.shape[0]
    nw, ns, nz = layer.values.shape
    state = np.zeros((nb + 1, nw, ns, nz))
    state[0] = layer.values
    out = [state[..., 0].copy()]
    for n, (t0, t1) in enumerate(zip(times[:-1], times[1:])):
        flux = np.zeros((nb + 1, nw, ns))
        flux[0] = G[n]
        src = np.zeros_like(state)
        src[1:] = B[n][None, ..., None] * prof[:, None, None, :]
        state = diffuse(state, layer.hz, t1 - t0, theta, flux, src)
        out.append(state[..., 0].copy())
    return np.stack(out)


# ---------------------------------------------------------------------------
# free decay


@dataclass
class DecayReport:
    """Norm and moment history of the free heat phase."""

    times: np.ndarray
    l2: np.ndarray
    moments: np.ndarray
    slope: float
    residual: float
    window: tuple
    snapshots: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise DataError("report times must be strictly increasing")

    def in_window(self):
        return (self.times >= self.window[0]) & (self.times <= self.window[1])

    def snapshot(self, t, rtol=1e-9):
        for key, prof in self.snapshots.items():
            if abs(key - t) <= rtol * max(1.0, abs(t)):
                return prof
        raise RangeError(f"report has no snapshot at t = {t}")

    def to_csv(self, path):
        K = self.moments.shape[-1] - 1
        flag = self.in_window()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "l2"] + [f"m{k}" for k in range(K + 1)] + ["in_window"])
            for i, t in enumerate(self.times):
                w.writerow([repr(float(t)), repr(float(self.l2[i]))]
                           + [repr(float(x)) for x in self.moments[i]] + [int(flag[i])])


def fit_slope(times, values, window):
    """Least-squares slope of ``log values`` against ``log times`` inside ``window``."""
    times, values = np.asarray(times), np.asarray(values)
    sel = (times >= window[0]) & (times <= window[1]) & (values > 0)
    if sel.sum() < 3:
        raise RangeError(f"fewer than three samples inside the fit window {window}")
    x, y = np.log(times[sel]), np.log(values[sel])
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    return float(coef[0]), resid


def extend_z(v: BoundaryLayerProfile, z_max):
    """Pad the profile with zeros up to ``z_max`` on the same spacing."""
    if z_max <= v.z_max:
        return v
    nz = int(round(z_max / v.hz)) + 1
    z = v.hz * np.arange(nz)
    vals = np.zeros(v.values.shape[:2] + (nz,))
    vals[..., : len(v.z_grid)] = v.values
    from dataclasses import replace

    return replace(v, z_grid=z, values=vals)


def relax_heat(v_bar: BoundaryLayerProfile, t_span, sample_times, K=2, window=(10.0, 1000.0), z_max=None,
               ratio=1.02, dt0=1e-2, theta=1.0, s_mask=None, keep=()) -> DecayReport:
    """Free evolution ``v_t = v_zz`` with homogeneous Neumann data at ``z = 0``.

    Steps are uniform (``dt0``) until they reach ``(ratio - 1) t`` and
    geometric afterwards, and always land on ``sample_times``.  ``t_span`` is
    measured from the start of the phase (``v_bar`` taken at ``t_span[0]``).
    Profiles at times listed in ``keep`` are stored as snapshots.
    """
    t_start, t_end = float(t_span[0]), float(t_span[1])
    if not t_end > t_start:
        raise ConfigError("t_span must be increasing")
    v = extend_z(v_bar, z_max) if z_max is not None else v_bar
    v = v.with_values(v.values.copy(), t=t_start)
    samples = np.unique(np.asarray(sample_times, dtype=float))
    if samples.size and (samples[0] < t_start or samples[-1] > t_end * (1 + 1e-12)):
        raise RangeError("sample times must lie inside t_span")
    marks = np.unique(np.concatenate([samples, np.asarray(keep, dtype=float), [t_end]]))
    marks = marks[marks > t_start]

    times, l2s, moms, snaps = [], [], [], {}

    def record(v):
        if samples.size and np.any(np.isclose(samples, v.t, rtol=1e-12, atol=0)):
            times.append(v.t)
            l2s.append(np.sqrt(v.l2_sq(s_mask)))
            m = compute_moments(v, K, tail_tol=np.inf).values
            if s_mask is not None:
                m = np.where(s_mask[..., None], m, 0.0)
            moms.append(m.sum(axis=(0, 1)) * v.hs)
        if np.any(np.isclose(keep, v.t, rtol=1e-12, atol=0)):
            snaps[float(v.t)] = v

    record(v)
    t = t_start
    for target in marks:
        while t < target * (1 - 1e-13):
            dt = max(dt0, (ratio - 1.0) * (t - t_start))
            dt = min(dt, target - t)
            if target - (t + dt) < 1e-3 * dt:
                dt = target - t
            vals = diffuse(v.values, v.hz, dt, theta)
            t = target if dt == target - t else t + dt
            v = v.with_values(vals, t=t)
            check_decay(v)
        v = v.with_values(v.values, t=target)
        t = target
        record(v)
    times_a = np.array(times)
    l2 = np.array(l2s)
    try:
        slope, resid = fit_slope(times_a, l2, window)
    except RangeError:
        slope, resid = float("nan"), float("nan")
    return DecayReport(times_a, l2, np.array(moms), slope, resid, tuple(window), snaps)


def scaled_layer_norm(report: DecayReport, eps, T, domain: Domain) -> float:
    """``|| sqrt(eps) v(T / eps, s, phi / sqrt(eps)) ||_{L2(Omega)}`` from a report snapshot."""
    if not eps > 0:
        raise ConfigError("eps must be positive")
    prof = report.snapshot(T / eps)
    return sample_layer_in_domain(prof, domain, eps).norm()
