"""Return-method flow: potential flushing field and linearized transport.

The auxiliary Euler flow is ``u0(t) = eta(t) grad(alpha)`` with ``alpha``
harmonic, ``d_n alpha = 0`` off the controlled boundary.  Because ``u0`` is
irrotational, the linearized field ``u1`` has a vorticity that is simply
carried by ``u0``; ``u1`` is recovered from it by a stream-function solve.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, GeometryError
from .fields import (
    BoundaryField,
    Grid,
    ScalarField,
    VectorField,
    curl2d,
    div,
    grad,
    normal_trace,
    solve_neumann_poisson,
    velocity_from_vorticity,
)
from .geometry import DISK, Domain
from .interp import CLAMP, FILL, interp2, interp_polar

PROFILES = ("sine", "bump")


@dataclass(frozen=True)
class TimeEnvelope:
    """Amplitude ``eta`` on ``[0, T]`` with ``eta(0) = eta(T) = 0`` and given mass."""

    T: float
    mass: float
    profile: str = "sine"

    def eta(self, t):
        t = np.asarray(t, dtype=float)
        T, m = self.T, self.mass
        inside = (t >= 0) & (t <= T)
        if self.profile == "sine":
            val = m * np.pi / (2 * T) * np.sin(np.pi * t / T)
        else:
            val = 2 * m / T * np.sin(np.pi * t / T) ** 2
        return np.where(inside, val, 0.0)

    def deta(self, t):
        t = np.asarray(t, dtype=float)
        T, m = self.T, self.mass
        inside = (t >= 0) & (t <= T)
        if self.profile == "sine":
            val = m * np.pi**2 / (2 * T**2) * np.cos(np.pi * t / T)
        else:
            val = 2 * m / T * (np.pi / T) * np.sin(2 * np.pi * t / T)
        return np.where(inside, val, 0.0)

    def cumulative(self, t):
        """``int_0^t eta``, the distance travelled along a uniform conveyor."""
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.T)
        T, m = self.T, self.mass
        if self.profile == "sine":
            return 0.5 * m * (1 - np.cos(np.pi * t / T))
        return 2 * m / T * (t / 2 - T * np.sin(2 * np.pi * t / T) / (4 * np.pi))


ZERO_ENVELOPE = None


def build_envelope(T, mass, profile="sine") -> TimeEnvelope:
    if not T > 0:
        raise ConfigError("envelope duration T must be positive")
    if not mass > 0:
        raise ConfigError("envelope mass must be positive")
    if profile not in PROFILES:
        raise ConfigError(f"envelope profile must be one of {PROFILES}")
    return TimeEnvelope(float(T), float(mass), profile)


@dataclass(eq=False)
class PotentialFlow:
    domain: Domain
    alpha_pot: ScalarField
    envelope: TimeEnvelope | None
    grad_alpha: VectorField = field(init=False)

    def __post_init__(self):
        self.grad_alpha = grad(self.alpha_pot)
        ga = self.grad_alpha.values.reshape(2, -1)
        spread = np.max(np.abs(ga - ga.mean(axis=1, keepdims=True)))
        # spatially uniform conveyor: skip interpolation entirely
        self._uniform = ga.mean(axis=1) if spread <= 1e-8 * (1.0 + np.abs(ga).max()) else None

    def eta(self, t):
        return 0.0 * np.asarray(t, dtype=float) if self.envelope is None else self.envelope.eta(t)

    def u0(self, t) -> VectorField:
        return self.grad_alpha * float(self.eta(t))

    def p0(self, t) -> ScalarField:
        if self.envelope is None:
            return ScalarField.zeros(self.alpha_pot.grid)
        e, de = float(self.envelope.eta(t)), float(self.envelope.deta(t))
        sq = np.sum(self.grad_alpha.values**2, axis=0)
        return ScalarField(self.alpha_pot.grid, -(de * self.alpha_pot.values + 0.5 * e**2 * sq))

    def grad_alpha_at(self, points):
        """``grad alpha`` at arbitrary points, constant extension outside."""
        p = np.asarray(points, dtype=float)
        if self._uniform is not None:
            return np.broadcast_to(self._uniform, p.shape).copy()
        g = self.alpha_pot.grid
        out = np.empty(p.shape)
        if g.is_polar:
            r = np.minimum(np.hypot(p[..., 0], p[..., 1]), g.x[-1])
            th = np.mod(np.arctan2(p[..., 1], p[..., 0]), 2 * np.pi)
            for c in range(2):
                out[..., c] = interp_polar(self.grad_alpha.values[c], g.hx, g.hy, r, th)
            return out
        px = np.clip(p[..., 0], g.x[0], g.x[-1])
        py = np.clip(p[..., 1], g.y[0], g.y[-1])
        for c in range(2):
            out[..., c] = interp2(self.grad_alpha.values[c], g.x[0], g.hx, g.y[0], g.hy, px, py, mode_x=CLAMP)
        return out

    def velocity_at(self, t, points):
        e = np.asarray(self.eta(t), dtype=float)
        if e.ndim:
            return e[..., None] * self.grad_alpha_at(points)
        return float(e) * self.grad_alpha_at(points)


def conveyor_flux(domain: Domain) -> BoundaryField:
    """Rectangle with both side walls controlled: unit inflow left, outflow right."""
    return BoundaryField.from_function(domain.grid, lambda x, y, nx, ny: nx)


def dipole_arc_flux(domain: Domain) -> BoundaryField:
    """Disk: inflow on the lower half of the arc, outflow on the upper half."""
    th0 = float(domain.spec.sigma)

    def f(x, y, nx, ny):
        th = np.arctan2(y, x)
        return np.where(np.abs(th) < th0, np.sin(np.pi * th / th0), 0.0)

    return BoundaryField.from_function(domain.grid, f)


def default_flux(domain: Domain) -> BoundaryField:
    if domain.kind == DISK:
        return dipole_arc_flux(domain)
    if set(domain.spec.sigma) == {"left", "right"}:
        return conveyor_flux(domain)
    # single controlled wall: in through the lower half, out through the upper half
    wall = domain.spec.sigma[0]

    def f(x, y, nx, ny):
        return np.where(np.abs(nx) > 0, -np.cos(np.pi * y), 0.0)

    bf = BoundaryField.from_function(domain.grid, f)
    for name in bf.walls:
        if name != wall:
            bf.walls[name] = np.zeros_like(bf.walls[name])
    return bf


def build_potential_flow(domain: Domain, envelope: TimeEnvelope | None, sigma_flux_profile=None, tol=1e-10):
    """Harmonic potential with flux ``sigma_flux_profile`` on the controlled part."""
    if sigma_flux_profile is None:
        sigma_flux_profile = default_flux(domain)
    if callable(sigma_flux_profile):
        sigma_flux_profile = BoundaryField.from_function(domain.grid, sigma_flux_profile)
    mask = domain.controlled_mask()
    for name, vals in sigma_flux_profile.walls.items():
        if np.any(np.abs(vals[~mask[name]]) > tol):
            raise DataError(f"flux profile is nonzero on uncontrolled wall {name!r}")
    net = sigma_flux_profile.integral()
    if abs(net) > tol * (1.0 + sigma_flux_profile.abs_integral()):
        raise DataError(f"flux profile through sigma has nonzero net flux {net:.3e}")
    alpha = solve_neumann_poisson(domain, ScalarField.zeros(domain.grid), sigma_flux_profile)
    return PotentialFlow(domain, alpha, envelope)


def still_flow(domain: Domain) -> PotentialFlow:
    """``u0 = 0``: linearization around rest, which cannot reach zero."""
    return PotentialFlow(domain, ScalarField.zeros(domain.grid), None)


# ---------------------------------------------------------------------------
# particle tracing


@dataclass
class FlushReport:
    seeds: np.ndarray
    exit_times: np.ndarray
    exit_speeds: np.ndarray
    T: float

    @property
    def worst_exit_time(self):
        return float(np.max(self.exit_times)) if self.exit_times.size else 0.0

    @property
    def flushed(self):
        return bool(np.all(np.isfinite(self.exit_times) & (self.exit_times <= self.T) & (self.exit_speeds > 0)))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seed_x", "seed_y", "exit_time", "exit_speed"])
            for s, t, v in zip(self.seeds, self.exit_times, self.exit_speeds):
                w.writerow([repr(float(s[0])), repr(float(s[1])), repr(float(t)), repr(float(v))])


def _rk4(pf, t, x, dt):
    """One RK4 step; ``dt`` may be a per-point array of shape ``(n,)``."""
    if np.ndim(dt):
        dt = np.asarray(dt, dtype=float)
        half, full = t + dt / 2, t + dt
        dt = dt[:, None]
    else:
        half, full = t + dt / 2, t + dt
    k1 = pf.velocity_at(t, x)
    k2 = pf.velocity_at(half, x + dt / 2 * k1)
    k3 = pf.velocity_at(half, x + dt / 2 * k2)
    k4 = pf.velocity_at(full, x + dt * k3)
    return x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _on_sigma(domain, pts):
    """Whether boundary-crossing points lie on the controlled part."""
    if domain.kind == DISK:
        # the discrete arc ends are resolved to one angular cell
        th = np.arctan2(pts[:, 1], pts[:, 0])
        return np.abs(th) <= float(domain.spec.sigma) + domain.grid.hy
    L = domain.spec.length
    tol = 1e-6
    left = (pts[:, 0] <= tol) & ("left" in domain.spec.sigma)
    right = (pts[:, 0] >= L - tol) & ("right" in domain.spec.sigma)
    return left | right


def trace_flow(pf: PotentialFlow, seeds, T, dt=1e-3, leak_tol=5e-2) -> FlushReport:
    """RK4 particle paths of ``u0``; record the first crossing of the boundary.

    The crossing time is located by bisection on the sub-step length within
    the step where the particle leaves.  Leaving through the uncontrolled part
    with a non-negligible outward velocity raises ``GeometryError``; slips by
    truncation error along a curved wall are pushed back inside.
    """
    domain = pf.domain
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    if np.any(domain.phi_at(seeds) < -1e-12):
        raise DataError("seeds must lie inside the domain")
    n = len(seeds)
    x = seeds.copy()
    exit_t = np.full(n, np.inf)
    exit_v = np.zeros(n)
    active = np.ones(n, dtype=bool)
    nsteps = max(1, int(math.ceil(T / dt - 1e-9)))
    h = T / nsteps
    for k in range(nsteps):
        if not active.any():
            break
        t0 = k * h
        xa = x[active]
        xn = _rk4(pf, t0, xa, h)
        phi1 = domain.phi_at(xn)
        crossed = phi1 < -1e-12
        if crossed.any():
            idx = np.flatnonzero(active)[crossed]
            # bisection on the sub-step length; robust for wall-sliding seeds
            lo = np.zeros(len(idx))
            hi = np.ones(len(idx))
            start = xa[crossed]
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                pm = _rk4(pf, t0, start, mid * h)
                out = domain.phi_at(pm) < -1e-12
                hi = np.where(out, mid, hi)
                lo = np.where(out, lo, mid)
            tc = t0 + hi * h
            pc = _rk4(pf, t0, start, hi * h)
            nrm = domain.normal_at(pc)
            vel = pf.velocity_at(tc, pc)
            off = ~_on_sigma(domain, pc)
            if off.any():
                # wall-sliding particles leak through curved walls by truncation error only
                vn = np.sum(vel[off] * nrm[off], axis=1)
                scale = np.abs(pf.eta(tc[off])) * pf.grad_alpha.max_abs()
                if np.any(vn > leak_tol * scale + 1e-12):
                    raise GeometryError("a particle left through the uncontrolled boundary")
                leak = np.flatnonzero(crossed)[off]
                xn[leak] -= (np.abs(phi1[leak]) + 1e-12)[:, None] * domain.normal_at(xn[leak])
                crossed[leak] = False
                idx, tc, vel, nrm = idx[~off], tc[~off], vel[~off], nrm[~off]
            exit_t[idx] = tc
            exit_v[idx] = np.sum(vel * nrm, axis=1)
            active[idx] = False
        x[active] = xn[~crossed]
    return FlushReport(seeds, exit_t, exit_v, float(T))


def flush_seeds(domain: Domain, n=9):
    """Seeds on a coarse lattice covering the closed domain."""
    if domain.kind == DISK:
        r = np.linspace(0, 1, n)
        th = np.linspace(0, 2 * np.pi, 4 * n, endpoint=False)
        R, TH = np.meshgrid(r, th, indexing="ij")
        pts = np.stack([R * np.cos(TH), R * np.sin(TH)], axis=-1).reshape(-1, 2)
        return np.unique(np.round(pts, 14), axis=0)
    L = domain.spec.length
    xs = np.linspace(0, L, 2 * n)
    ys = np.linspace(0, 1, n)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return np.stack([X, Y], axis=-1).reshape(-1, 2)


# ---------------------------------------------------------------------------
# linearized transport


@dataclass
class U1Trajectory:
    times: list
    fields: list
    flush_time: float
    trace_modes: list
    sigma_traces: list
    omega_final: ScalarField

    @property
    def final(self) -> VectorField:
        return self.fields[-1]


def _extended_grid(domain: Domain):
    """Grid over Omega plus the kitchens beyond the controlled side walls."""
    g = domain.grid
    if g.is_polar:
        return g, 0
    k = max(1, int(round(domain.spec.kitchen_depth / g.hx)))
    kl = k if "left" in domain.spec.sigma else 0
    kr = k if "right" in domain.spec.sigma else 0
    x = g.x[0] + g.hx * np.arange(-kl, len(g.x) + kr)
    return Grid(x, g.y.copy()), kl


def _restrict(domain, ext, offset, arr):
    if ext is domain.grid:
        return arr
    n0 = domain.grid.shape[0]
    return arr[..., offset : offset + n0, :]


def verify_null(u1_final: VectorField) -> float:
    """L2 norm over the domain."""
    return u1_final.norm()


def solve_u1(
    domain: Domain,
    pf: PotentialFlow,
    u_star: VectorField,
    T,
    inflow_vorticity=0.0,
    dt=None,
    cfl=8.0,
    n_samples=5,
    limit=False,
    tol=1e-6,
) -> U1Trajectory:
    """Transport ``curl u1`` by ``u0`` (semi-Lagrangian, RK4 feet) and rebuild ``u1``.

    Before the flushing time ``u1`` is rebuilt on the extended domain with
    zero normal flux on its outer boundary and restricted to the domain;
    after it, the controlled normal trace is set to zero.
    """
    g = domain.grid
    if not g.compatible(u_star.grid):
        raise DataError("u_star is not sampled on the domain grid")
    scale = 1.0 + u_star.max_abs()
    if div(u_star).max_abs() > tol * scale / min(g.hx, g.hy):
        raise DataError("u_star is not divergence free")
    tr = normal_trace(u_star)
    mask = domain.controlled_mask()
    for name, vals in tr.walls.items():
        if np.any(np.abs(vals[~mask[name]]) > 1e3 * tol * scale):
            raise DataError(f"u_star has a normal component on uncontrolled wall {name!r}")

    ext, off = _extended_grid(domain)
    omega0 = curl2d(u_star).values
    omega = np.zeros(ext.shape)
    if ext is g:
        omega = omega0.copy()
    else:
        omega[off : off + g.shape[0]] = omega0

    report = trace_flow(pf, flush_seeds(domain), T, dt=T / 200) if pf.envelope else None
    flush_time = report.worst_exit_time if report is not None and report.flushed else math.inf

    h = min(g.hx, g.hy) if not g.is_polar else g.hx
    vmax = float(np.max(np.hypot(*pf.grad_alpha.values))) * (
        float(np.max(pf.eta(np.linspace(0, T, 401)))) if pf.envelope else 0.0
    )
    if dt is None:
        dt = cfl * h / vmax if vmax > 0 else T / 50
    nsteps = max(1, int(math.ceil(T / dt - 1e-9)))
    dt = T / nsteps
    sample_steps = sorted({int(round(k)) for k in np.linspace(0, nsteps, max(2, n_samples))})

    pts = ext.points()
    flat = pts.reshape(-1, 2)

    def rebuild(t, om):
        if t >= flush_time or ext is g:
            vort = ScalarField(g, _restrict(domain, ext, off, om))
            u = velocity_from_vorticity(g, vort, BoundaryField.zeros(g))
            return u, "zero"
        u_ext = velocity_from_vorticity(ext, ScalarField(ext, om), BoundaryField.zeros(ext))
        return VectorField(g, _restrict(domain, ext, off, u_ext.values)), "extended"

    times, fields_, modes, traces = [], [], [], []

    def record(t, om):
        u, mode = rebuild(t, om)
        times.append(t)
        fields_.append(u)
        modes.append(mode)
        traces.append(normal_trace(u))

    if 0 in sample_steps:
        record(0.0, omega)
    for k in range(nsteps):
        t1 = (k + 1) * dt
        if pf._uniform is not None and pf.envelope is not None:
            # exact characteristics of a uniform conveyor
            shift = float(pf.envelope.cumulative(t1) - pf.envelope.cumulative(t1 - dt))
            foot = pts - shift * pf._uniform
        else:
            foot = _rk4(pf, t1, flat, -dt).reshape(pts.shape)
        if ext.is_polar:
            r = np.hypot(foot[..., 0], foot[..., 1])
            th = np.mod(np.arctan2(foot[..., 1], foot[..., 0]), 2 * np.pi)
            omega = interp_polar(omega, ext.hx, ext.hy, r, th, fill=inflow_vorticity, limit=limit)
        else:
            omega = interp2(
                omega, ext.x[0], ext.hx, ext.y[0], ext.hy, foot[..., 0], foot[..., 1],
                fill=inflow_vorticity, mode_x=FILL, mode_y=CLAMP, limit=limit,
            )
        if k + 1 in sample_steps:
            record(t1, omega)
    return U1Trajectory(times, fields_, flush_time, modes, traces, ScalarField(g, _restrict(domain, ext, off, omega)))
