"""Scaled viscous solver on the rectangle (MAC staggered grid).

One step: semi-Lagrangian advection (midpoint feet, bicubic interpolation
on ghost-extended arrays), backward-Euler diffusion with viscosity ``eps``,
then an exact discrete projection.  Horizontal walls always carry the
Navier slip-with-friction condition; the side walls carry either the
prescribed control trace (Dirichlet) or the same Navier condition.

The Navier ghost value comes from the quadratic through the ghost and the
first two interior samples that satisfies the wall condition exactly, so
quadratic profiles (the steady channel flow) are discrete fixed points.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, DataError, SolverError, StepSizeError, UnsupportedScenarioError
from .fields import Grid, ScalarField, VectorField, dump_binary, grad
from .geometry import DISK, Domain, smooth_step
from .interp import CLAMP, PERIODIC, interp1, interp2

CONTROLLED = "controlled"
UNCONTROLLED = "uncontrolled"


# ---------------------------------------------------------------------------
# Navier boundary operator on node fields


def navier_operator(u: VectorField, domain: Domain, friction_alpha):
    """``N(u) = [D(u) n + alpha u]_tan`` on the uncontrolled walls.

    Returns ``{wall: array (n_samples, 2)}``; derivatives use the one-sided
    end stencils of the field operators.
    """
    g = u.grid
    if g.is_polar:
        raise UnsupportedScenarioError("navier_operator is implemented for the rectangle")
    J = np.stack([grad(ScalarField(g, u.values[i])).values for i in range(2)])  # J[i, j] = d_j u_i
    D = 0.5 * (J + np.swapaxes(J, 0, 1))
    sel = {"bottom": (slice(None), 0), "top": (slice(None), -1), "left": (0, slice(None)), "right": (-1, slice(None))}
    normals = {"bottom": (0.0, -1.0), "top": (0.0, 1.0), "left": (-1.0, 0.0), "right": (1.0, 0.0)}
    out = {}
    for wall in domain.uncontrolled_walls():
        i, j = sel[wall]
        n = np.array(normals[wall])
        Dw = D[:, :, i, j]
        uw = u.values[:, i, j]
        vec = np.einsum("abk,b->ak", Dw, n) + friction_alpha * uw
        vec = vec - np.sum(vec * n[:, None], axis=0) * n[:, None]
        out[wall] = vec.T
    return out


# ---------------------------------------------------------------------------
# staggered grid and state


@dataclass(frozen=True, eq=False)
class MACGrid:
    """``nx`` x ``ny`` cells on ``[0, L] x [0, 1]``; ``periodic`` wraps ``x``."""

    length: float
    nx: int
    ny: int
    periodic: bool = False

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ConfigError("viscous grid needs at least 4 cells per direction")

    @property
    def hx(self):
        return self.length / self.nx

    @property
    def hy(self):
        return 1.0 / self.ny

    @property
    def nu(self):
        return self.nx if self.periodic else self.nx + 1

    @property
    def xu(self):
        return self.hx * np.arange(self.nu)

    @property
    def yc(self):
        return self.hy * (np.arange(self.ny) + 0.5)

    @property
    def xc(self):
        return self.hx * (np.arange(self.nx) + 0.5)

    @property
    def yv(self):
        return self.hy * np.arange(self.ny + 1)

    def face_weights(self):
        wu = np.full((self.nu, self.ny), self.hx * self.hy)
        if not self.periodic:
            wu[[0, -1]] *= 0.5
        wv = np.full((self.nx, self.ny + 1), self.hx * self.hy)
        wv[:, [0, -1]] *= 0.5
        return wu, wv


@dataclass
class ControlTrace:
    """Side-wall data: normal ``u`` at cell-centre heights, tangential ``v`` at face heights."""

    mode: str
    left_u: np.ndarray | None = None
    left_v: np.ndarray | None = None
    right_u: np.ndarray | None = None
    right_v: np.ndarray | None = None

    @classmethod
    def uncontrolled(cls):
        return cls(UNCONTROLLED)


def _ghost_coeffs(alpha, h):
    """Navier ghost ``c0 * u_0 + c1 * u_1`` from the quadratic satisfying ``u' = 2 alpha u``."""
    den = 1.0 + 0.75 * alpha * h
    return (1.0 - 1.5 * alpha * h) / den, (0.25 * alpha * h) / den


@dataclass
class ViscousState:
    grid: MACGrid
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    t: float
    eps: float
    friction: float
    mode_log: list = field(default_factory=list)

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigError("viscosity eps must be positive")
        g = self.grid
        if self.u.shape != (g.nu, g.ny) or self.v.shape != (g.nx, g.ny + 1):
            raise DataError("state arrays do not match the staggered grid")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise SolverError("viscous state is not finite")

    @classmethod
    def zeros(cls, grid, eps, friction=0.0):
        return cls(grid, np.zeros((grid.nu, grid.ny)), np.zeros((grid.nx, grid.ny + 1)),
                   np.zeros((grid.nx, grid.ny)), 0.0, eps, friction)

    @classmethod
    def from_function(cls, grid, func, eps, friction=0.0, project=True):
        """Sample ``func(x, y) -> (u, v)`` on the faces and (optionally) project."""
        X, Y = np.meshgrid(grid.xu, grid.yc, indexing="ij")
        u = np.asarray(func(X, Y)[0], dtype=float) * np.ones(X.shape)
        X, Y = np.meshgrid(grid.xc, grid.yv, indexing="ij")
        v = np.asarray(func(X, Y)[1], dtype=float) * np.ones(X.shape)
        v[:, [0, -1]] = 0.0
        st = cls(grid, u, v, np.zeros((grid.nx, grid.ny)), 0.0, eps, friction)
        if project:
            st.u, st.v, _ = project_mac(grid, st.u, st.v)
        return st

    def copy(self):
        return replace(self, u=self.u.copy(), v=self.v.copy(), p=self.p.copy(), mode_log=list(self.mode_log))

    def energy(self):
        wu, wv = self.grid.face_weights()
        return float(np.sum(wu * self.u**2) + np.sum(wv * self.v**2))

    def norm(self):
        return np.sqrt(self.energy())

    def divergence(self):
        return mac_divergence(self.grid, self.u, self.v)

    def div_max(self):
        return float(np.max(np.abs(self.divergence())))

    def dump(self, path):
        head = np.array([self.grid.nx, self.grid.ny, self.t, self.eps])
        dump_binary(np.concatenate([head, self.u.ravel(), self.v.ravel(), self.p.ravel()]), path)

    def to_nodes(self, domain_grid: Grid, trace: ControlTrace | None = None) -> VectorField:
        """Node-grid velocity (ghost-averaged), matching a ``Grid.box`` with the same cells."""
        g = self.grid
        if domain_grid.shape != (g.nx + 1, g.ny + 1):
            raise DataError("node grid does not match the staggered grid")
        U = _u_ext(g, self.u, self.friction)
        V = _v_ext(g, self.v, self.friction, trace or ControlTrace.uncontrolled())
        un = 0.5 * (U[:, :-1] + U[:, 1:])
        if g.periodic:
            un = np.vstack([un, un[:1]])
            vn = 0.5 * (V + np.roll(V, 1, axis=0))
            vn = np.vstack([vn, vn[:1]])
        else:
            vn = 0.5 * (V[:-1] + V[1:])
        return VectorField(domain_grid, np.stack([un, vn]))


def state_from_nodes(grid: MACGrid, field_: VectorField, eps, friction=0.0, project=True) -> ViscousState:
    """Average node samples onto the faces."""
    u_n, v_n = field_.values
    if u_n.shape != (grid.nx + 1, grid.ny + 1):
        raise DataError("node field does not match the staggered grid")
    u = 0.5 * (u_n[:, :-1] + u_n[:, 1:])
    if grid.periodic:
        u = u[:-1]
    v = 0.5 * (v_n[:-1] + v_n[1:])
    v[:, [0, -1]] = 0.0
    st = ViscousState(grid, u, v, np.zeros((grid.nx, grid.ny)), 0.0, eps, friction)
    if project:
        st.u, st.v, _ = project_mac(grid, st.u, st.v)
    return st


# ---------------------------------------------------------------------------
# ghost extension


def _u_ext(g, u, alpha):
    """``u`` with Navier ghost rows below and above: shape ``(nu, ny + 2)``."""
    c0, c1 = _ghost_coeffs(alpha, g.hy)
    bot = c0 * u[:, 0] + c1 * u[:, 1]
    top = c0 * u[:, -1] + c1 * u[:, -2]
    return np.concatenate([bot[:, None], u, top[:, None]], axis=1)


def _v_ext(g, v, alpha, trace):
    """``v`` with side ghost columns (none when periodic): shape ``(nx + 2, ny + 1)``."""
    if g.periodic:
        return v
    if trace.mode == CONTROLLED:
        left = 2 * trace.left_v - v[0]
        right = 2 * trace.right_v - v[-1]
    else:
        c0, c1 = _ghost_coeffs(alpha, g.hx)
        left = c0 * v[0] + c1 * v[1]
        right = c0 * v[-1] + c1 * v[-2]
    left, right = left.copy(), right.copy()
    left[[0, -1]] = 0.0
    right[[0, -1]] = 0.0
    return np.concatenate([left[None], v, right[None]], axis=0)


def _sample_u(g, U, px, py):
    mode = PERIODIC if g.periodic else CLAMP
    return interp2(U, 0.0, g.hx, -0.5 * g.hy, g.hy, px, py, mode_x=mode, mode_y=CLAMP)


def _sample_v(g, V, px, py):
    if g.periodic:
        return interp2(V, 0.5 * g.hx, g.hx, 0.0, g.hy, px, py, mode_x=PERIODIC, mode_y=CLAMP)
    return interp2(V, -0.5 * g.hx, g.hx, 0.0, g.hy, px, py, mode_x=CLAMP, mode_y=CLAMP)


# ---------------------------------------------------------------------------
# linear systems


def mac_divergence(g, u, v):
    if g.periodic:
        du = (np.roll(u, -1, axis=0) - u) / g.hx
    else:
        du = (u[1:] - u[:-1]) / g.hx
    return du + (v[:, 1:] - v[:, :-1]) / g.hy


@lru_cache(maxsize=16)
def _pressure_system(g: MACGrid):
    nx, ny = g.nx, g.ny
    idx = np.arange(nx * ny).reshape(nx, ny)
    rows, cols, vals = [], [], []

    def couple(a, b, w):
        rows.extend([a, a, b, b])
        cols.extend([a, b, b, a])
        vals.extend([-w, w, -w, w])

    for i in range(nx):
        j = np.arange(ny)
        if i + 1 < nx:
            for a, b in zip(idx[i], idx[i + 1]):
                couple(a, b, 1 / g.hx**2)
        elif g.periodic:
            for a, b in zip(idx[i], idx[0]):
                couple(a, b, 1 / g.hx**2)
        for a, b in zip(idx[i, :-1], idx[i, 1:]):
            couple(a, b, 1 / g.hy**2)
    n = nx * ny
    L = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    ones = np.ones((n, 1))
    A = sp.bmat([[L, sp.csr_matrix(ones)], [sp.csr_matrix(ones.T), None]], format="csc")
    return spla.splu(A), L


def project_mac(g: MACGrid, u, v, tol=1e-9):
    """Exact discrete projection; boundary normal velocities stay as given.

    Returns the projected ``(u, v)`` and the potential ``phi`` with
    ``u_new = u - grad phi``.
    """
    lu, L = _pressure_system(g)
    div = mac_divergence(g, u, v).ravel()
    if not g.periodic:
        # net boundary flux must vanish for the Neumann problem
        if abs(div.sum()) > 1e-8 * (1 + np.abs(div).sum()):
            raise DataError(f"net boundary flux {div.sum() * g.hx * g.hy:.3e} is not zero")
    div = div - div.mean()
    phi = lu.solve(np.concatenate([div, [0.0]]))[:-1]
    res = np.max(np.abs(L @ phi - div)) if div.size else 0.0
    if res > tol * (1 + np.abs(div).max()):
        raise SolverError("pressure projection did not converge", res)
    P = phi.reshape(g.nx, g.ny)
    u, v = u.copy(), v.copy()
    if g.periodic:
        u -= (P - np.roll(P, 1, axis=0)) / g.hx
    else:
        u[1:-1] -= (P[1:] - P[:-1]) / g.hx
    v[:, 1:-1] -= (P[:, 1:] - P[:, :-1]) / g.hy
    return u, v, P


@lru_cache(maxsize=32)
def _diffusion_u(g: MACGrid, nu_dt, alpha):
    """``I - nu dt Lap`` for interior ``u`` unknowns (Navier ghosts top and bottom)."""
    ni = g.nu if g.periodic else g.nx - 1
    ny = g.ny
    n = ni * ny
    cx, cy = nu_dt / g.hx**2, nu_dt / g.hy**2
    c0, c1 = _ghost_coeffs(alpha, g.hy)
    A = sp.lil_matrix((n, n))
    for a in range(ni):
        for j in range(ny):
            k = a * ny + j
            A[k, k] += 1 + 2 * cx + 2 * cy
            for da in (-1, 1):
                b = a + da
                if g.periodic:
                    A[k, (b % ni) * ny + j] -= cx
                elif 0 <= b < ni:
                    A[k, b * ny + j] -= cx
            for dj, edge, inner in ((-1, 0, 1), (1, ny - 1, ny - 2)):
                jj = j + dj
                if 0 <= jj < ny:
                    A[k, a * ny + jj] -= cy
                else:
                    A[k, a * ny + edge] -= cy * c0
                    A[k, a * ny + inner] -= cy * c1
    return spla.splu(A.tocsc())


@lru_cache(maxsize=32)
def _diffusion_v(g: MACGrid, nu_dt, alpha, side_mode):
    """``I - nu dt Lap`` for interior ``v`` unknowns; side ghosts by ``side_mode``."""
    nx, nj = g.nx, g.ny - 1
    n = nx * nj
    cx, cy = nu_dt / g.hx**2, nu_dt / g.hy**2
    c0, c1 = _ghost_coeffs(alpha, g.hx)
    A = sp.lil_matrix((n, n))
    for i in range(nx):
        for j in range(nj):
            k = i * nj + j
            A[k, k] += 1 + 2 * cx + 2 * cy
            for dj in (-1, 1):
                if 0 <= j + dj < nj:
                    A[k, i * nj + j + dj] -= cy
            for di, edge, inner in ((-1, 0, 1), (1, nx - 1, nx - 2)):
                ii = i + di
                if g.periodic:
                    A[k, (ii % nx) * nj + j] -= cx
                elif 0 <= ii < nx:
                    A[k, ii * nj + j] -= cx
                elif side_mode == CONTROLLED:
                    A[k, edge * nj + j] += cx  # ghost = 2 trace - v_edge
                else:
                    A[k, edge * nj + j] -= cx * c0
                    A[k, inner * nj + j] -= cx * c1
    return spla.splu(A.tocsc())


# ---------------------------------------------------------------------------
# stepping


def balance_trace(trace: ControlTrace, grid: MACGrid) -> ControlTrace:
    """Remove the net side-wall flux by a uniform shift split over both walls."""
    if trace.mode != CONTROLLED:
        return trace
    flux = grid.hy * (np.sum(trace.right_u) - np.sum(trace.left_u))
    c = flux / 2.0
    return replace(trace, left_u=trace.left_u + c, right_u=trace.right_u - c)


def step_viscous(state: ViscousState, control_trace: ControlTrace | None, dt, forcing=None, cfl_max=2.0,
                 div_tol=1e-8) -> ViscousState:
    """One projection step of the scaled system at viscosity ``state.eps``.

    ``control_trace`` holds the side-wall data at the new time (``None`` or
    an uncontrolled trace switches the side walls to the Navier condition).
    """
    g = state.grid
    if not (np.isfinite(dt) and dt > 0):
        raise StepSizeError(f"time step must be positive, got {dt}")
    trace = control_trace if control_trace is not None else ControlTrace.uncontrolled()
    if g.periodic and trace.mode == CONTROLLED:
        raise UnsupportedScenarioError("periodic channel has no controlled walls")
    if trace.mode == CONTROLLED:
        trace = balance_trace(trace, g)
    umax = max(np.abs(state.u).max(initial=0.0), np.abs(state.v).max(initial=0.0))
    if trace.mode == CONTROLLED:
        umax = max(umax, np.abs(trace.left_u).max(), np.abs(trace.right_u).max())
    if umax * dt / min(g.hx, g.hy) > cfl_max:
        raise StepSizeError(f"advective CFL {umax * dt / min(g.hx, g.hy):.2f} exceeds {cfl_max}")
    alpha, nu = state.friction, state.eps

    # advection
    U = _u_ext(g, state.u, alpha)
    V = _v_ext(g, state.v, alpha, trace)

    def vel(px, py):
        return _sample_u(g, U, px, py), _sample_v(g, V, px, py)

    def foot(px, py):
        a, b = vel(px, py)
        a, b = vel(px - 0.5 * dt * a, py - 0.5 * dt * b)
        return px - dt * a, np.clip(py - dt * b, -0.5 * g.hy, 1 + 0.5 * g.hy)

    X, Y = np.meshgrid(g.xu, g.yc, indexing="ij")
    fx, fy = foot(X, Y)
    u_star = _sample_u(g, U, fx, fy)
    X, Y = np.meshgrid(g.xc, g.yv, indexing="ij")
    fx, fy = foot(X, Y)
    v_star = _sample_v(g, V, fx, fy)
    v_star[:, [0, -1]] = 0.0

    if forcing is not None:
        fu, fv = forcing
        u_star = u_star + dt * fu
        v_star[:, 1:-1] = v_star[:, 1:-1] + dt * fv

    # diffusion (backward Euler)
    cx = nu * dt / g.hx**2
    if g.periodic:
        rhs = u_star
        u_new = _diffusion_u(g, nu * dt, alpha).solve(rhs.ravel()).reshape(g.nu, g.ny)
    else:
        if trace.mode == CONTROLLED:
            ul, ur = trace.left_u, trace.right_u
        else:
            ul = ur = np.zeros(g.ny)
        rhs = u_star[1:-1].copy()
        rhs[0] += cx * ul
        rhs[-1] += cx * ur
        inner = _diffusion_u(g, nu * dt, alpha).solve(rhs.ravel()).reshape(g.nx - 1, g.ny)
        u_new = np.concatenate([ul[None], inner, ur[None]], axis=0)
    rhs = v_star[:, 1:-1].copy()
    mode = UNCONTROLLED if g.periodic else trace.mode
    if mode == CONTROLLED:
        rhs[0] += 2 * cx * trace.left_v[1:-1]
        rhs[-1] += 2 * cx * trace.right_v[1:-1]
    inner = _diffusion_v(g, nu * dt, alpha, mode).solve(rhs.ravel()).reshape(g.nx, g.ny - 1)
    v_new = np.zeros((g.nx, g.ny + 1))
    v_new[:, 1:-1] = inner

    u_new, v_new, phi = project_mac(g, u_new, v_new)
    out = ViscousState(g, u_new, v_new, phi / dt, state.t + dt, state.eps, state.friction,
                       state.mode_log + [trace.mode])
    scale = 1.0 + umax
    if out.div_max() > div_tol * scale / min(g.hx, g.hy):
        raise SolverError("divergence above projection tolerance", out.div_max())
    return out


# ---------------------------------------------------------------------------
# expansion bundle and control trace


@dataclass
class LayerHistory:
    """Layer columns at the side-wall ends of the horizontal walls, per layer step.

    ``columns[n, wall, side, z]`` with ``side`` 0 at ``s = 0`` and 1 at ``s = L``.
    """

    times: np.ndarray
    z_grid: np.ndarray
    columns: np.ndarray
    walls: tuple

    def at(self, t):
        ts = self.times
        if t <= ts[0]:
            return self.columns[0]
        if t >= ts[-1]:
            return self.columns[-1]
        i = int(np.searchsorted(ts, t, side="right") - 1)
        f = (t - ts[i]) / (ts[i + 1] - ts[i])
        return (1 - f) * self.columns[i] + f * self.columns[i + 1]


def layer_columns(profile, L):
    """Columns of a layer profile interpolated at ``s = 0`` and ``s = L``."""
    out = np.empty((len(profile.walls), 2, len(profile.z_grid)))
    for w in range(len(profile.walls)):
        vals = profile.values[w]
        out[w] = interp1(vals, profile.s_grid[0], profile.hs, np.array([0.0, L]), fill=0.0)
    return out


@dataclass
class ExpansionBundle:
    """``u0``, ``u1`` and the layer needed to build traces and remainders.

    ``u1`` is an ``U1Trajectory``-like object (``times``, ``fields``);
    ``layer_history`` covers ``[0, T]`` at the side walls; ``layer_snapshots``
    maps times to full layer profiles (used for remainders).
    """

    domain: Domain
    flow: object
    T: float
    u1: object
    layer_history: LayerHistory | None
    layer_snapshots: dict = field(default_factory=dict)
    chi_support: float | None = None

    def u0_at(self, t, pts):
        if t > self.T or self.flow.envelope is None:
            return np.zeros(np.shape(pts))
        return self.flow.velocity_at(t, pts)

    def u1_at(self, t, pts):
        if self.u1 is None or t > self.T:
            return np.zeros(np.shape(pts))
        times = np.asarray(self.u1.times)
        fields_ = self.u1.fields
        if t <= times[0]:
            i, f = 0, 0.0
        elif t >= times[-1]:
            i, f = len(times) - 2, 1.0
        else:
            i = int(np.searchsorted(times, t, side="right") - 1)
            f = (t - times[i]) / (times[i + 1] - times[i])
        g = fields_[0].grid
        out = np.empty(np.shape(pts))
        for c in range(2):
            a = fields_[i].values[c]
            b = fields_[min(i + 1, len(fields_) - 1)].values[c]
            arr = (1 - f) * a + f * b
            out[..., c] = interp2(arr, g.x[0], g.hx, g.y[0], g.hy, pts[..., 0], pts[..., 1],
                                  mode_x=CLAMP, mode_y=CLAMP)
        return out

    def _chi(self, dist):
        b = self.chi_support if self.chi_support is not None else self.domain.chi_support
        return 1.0 - smooth_step((dist - 0.5 * b) / (0.5 * b))

    def layer_on_sides(self, t, eps, y, side):
        """``sqrt(eps) v`` (x-component) on a side wall (0 left, 1 right) at heights ``y``."""
        if self.layer_history is None or t > self.T:
            return np.zeros(np.shape(y))
        cols = self.layer_history.at(t)
        z = self.layer_history.z_grid
        out = np.zeros(np.shape(y))
        root = np.sqrt(eps)
        for w, wall in enumerate(self.layer_history.walls):
            dist = y if wall == "bottom" else 1.0 - y
            val = np.interp(dist / root, z, cols[w, side], right=0.0)
            out += root * self._chi(dist) * val
        return out

    def layer_field(self, t, eps, grid: Grid):
        """Full layer field on the node grid from the nearest stored snapshot."""
        from .boundary_layer import sample_layer_in_domain

        if not self.layer_snapshots:
            return VectorField.zeros(grid)
        key = min(self.layer_snapshots, key=lambda k: abs(k - t))
        if abs(key - t) > 1e-9 * max(1.0, t):
            raise DataError(f"no layer snapshot at t = {t}")
        return sample_layer_in_domain(self.layer_snapshots[key], self.domain, eps)


def build_control_trace(bundle: ExpansionBundle, grid: MACGrid, eps, t) -> ControlTrace:
    """``u0 + sqrt(eps) v + eps u1`` on the controlled side walls; Navier after ``T``."""
    if t > bundle.T:
        return ControlTrace.uncontrolled()
    sig = bundle.domain.spec.sigma
    L = grid.length
    parts = {}
    for side, x in ((0, 0.0), (1, L)):
        pu = np.stack([np.full(grid.ny, x), grid.yc], axis=-1)
        pv = np.stack([np.full(grid.ny + 1, x), grid.yv], axis=-1)
        wall = "left" if side == 0 else "right"
        if wall not in sig:
            parts[side] = (np.zeros(grid.ny), np.zeros(grid.ny + 1))
            continue
        u = bundle.u0_at(t, pu)[..., 0] + eps * bundle.u1_at(t, pu)[..., 0]
        u = u + bundle.layer_on_sides(t, eps, grid.yc, side)
        v = bundle.u0_at(t, pv)[..., 1] + eps * bundle.u1_at(t, pv)[..., 1]
        v[[0, -1]] = 0.0
        parts[side] = (u, v)
    return ControlTrace(CONTROLLED, parts[0][0], parts[0][1], parts[1][0], parts[1][1])


# ---------------------------------------------------------------------------
# remainder and norms


@dataclass
class RemainderDiagnostics:
    r_eps: VectorField
    norm: float
    history: list
    forcing: float | None = None
    amplification: float | None = None


def bundle_field(bundle: ExpansionBundle, eps, t, grid: Grid) -> VectorField:
    """``u0 + sqrt(eps) v + eps u1`` on the node grid."""
    pts = grid.points()
    vals = bundle.u0_at(t, pts) + eps * bundle.u1_at(t, pts)
    lay = bundle.layer_field(t, eps, grid) if bundle.layer_snapshots else VectorField.zeros(grid)
    return VectorField(grid, np.moveaxis(vals, -1, 0) + lay.values)


def extract_remainder(state: ViscousState, bundle: ExpansionBundle, eps, history=None, dt=None) -> RemainderDiagnostics:
    """``r = (u_eps - u0 - sqrt(eps) v - eps u1) / eps`` with optional defect diagnostics.

    With ``dt`` given, the expansion is pushed through one viscous step:
    ``forcing`` is the defect of the bundle itself (per unit ``eps dt``),
    ``amplification`` the growth rate of ``r`` under the linearized step.
    """
    dgrid = bundle.domain.grid
    ub = bundle_field(bundle, eps, state.t, dgrid)
    ue = state.to_nodes(dgrid)
    r = VectorField(dgrid, (ue.values - ub.values) / eps)
    hist = list(history or []) + [(state.t, r.norm())]
    forcing = amplification = None
    if dt is not None and state.t + dt > bundle.T:
        g = state.grid
        sb = state_from_nodes(g, ub, eps, state.friction)
        sb.t = state.t
        nb = step_viscous(sb, build_control_trace(bundle, g, eps, state.t + dt), dt)
        target = bundle_field(bundle, eps, state.t + dt, dgrid)
        forcing = float(VectorField(dgrid, nb.to_nodes(dgrid).values - target.values).norm() / (eps * dt))
        ns = step_viscous(state, build_control_trace(bundle, g, eps, state.t + dt), dt)
        dr = (ns.to_nodes(dgrid).values - nb.to_nodes(dgrid).values) / eps - r.values
        amplification = float(VectorField(dgrid, dr).norm() / (dt * max(r.norm(), 1e-300)))
    return RemainderDiagnostics(r, r.norm(), hist, forcing, amplification)


def final_norm(state: ViscousState) -> float:
    """``||u_eps||_{L2(Omega)}`` (staggered quadrature)."""
    return state.norm()


def write_history(rows, path):
    """Norm history CSV: ``t, L2_u, L2_r, div_max``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "L2_u", "L2_r", "div_max"])
        for row in rows:
            w.writerow([repr(float(x)) for x in row])
