"""Boundary-layer corrector ``v(t, s, z)`` on the wall strips of the extended domain.

The profile lives on a (wall position ``s``) x (fast variable ``z``) grid.
Only the tangential component is stored; the full vector is rebuilt from
the wall frame, so ``v . n`` vanishes identically.

Rectangle walls are the horizontal walls ``y = 0`` and ``y = 1`` with
``s = x`` running over ``[-d, L + d]`` (kitchens beyond controlled side
walls).  The disk carries one periodic strip indexed by the angle.

Two frames are supported for the wall coordinate.  ``eulerian`` keeps fixed
``s`` nodes and advects with a semi-Lagrangian cubic step.  ``lagrangian``
attaches every column to a characteristic label and moves the positions;
it needs a spatially uniform wall speed (the conveyor) and introduces no
interpolation at all.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_banded

from .errors import ConfigError, DataError, DomainSizeError, StepSizeError, UnsupportedScenarioError
from .fields import ScalarField, VectorField, grad, load_binary, dump_binary, normal_trace
from .geometry import DISK, RECTANGLE, Domain, smooth_step
from .interp import CLAMP, FILL, PERIODIC, interp1, interp2

EULERIAN = "eulerian"
LAGRANGIAN = "lagrangian"
AUTO = "auto"
GENERIC = "generic"
REDUCED = "reduced"

# three-point Gauss-Legendre on [0, 1]
_GAUSS_X = 0.5 + 0.5 * np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
_GAUSS_W = np.array([5.0, 8.0, 5.0]) / 18.0

# extrapolation from cell centres at depths 0.5, 1.5, 2.5 cells to the wall
_RING_WEIGHTS = np.array([3.0, -10.0, 15.0]) / 8.0


# ---------------------------------------------------------------------------
# time factors


@dataclass(frozen=True)
class Steady:
    """Constant factor ``value``."""

    value: float = 1.0

    def eta(self, t):
        return self.value + 0.0 * np.asarray(t, dtype=float)

    def cumulative(self, t):
        return self.value * np.asarray(t, dtype=float)


@dataclass(frozen=True)
class Pulse:
    """``amplitude`` on ``[0, t_end)``, zero afterwards."""

    amplitude: float
    t_end: float

    def eta(self, t):
        t = np.asarray(t, dtype=float)
        return np.where((t >= 0) & (t < self.t_end), self.amplitude, 0.0)

    def cumulative(self, t):
        return self.amplitude * np.clip(np.asarray(t, dtype=float), 0.0, self.t_end)


# ---------------------------------------------------------------------------
# wall frames


def wall_frame(kind, wall, s):
    """Wall points, unit tangents and outward normals at positions ``s``."""
    s = np.asarray(s, dtype=float)
    one, zero = np.ones_like(s), np.zeros_like(s)
    if kind == DISK:
        c, sn = np.cos(s), np.sin(s)
        return np.stack([c, sn], -1), np.stack([-sn, c], -1), np.stack([c, sn], -1)
    if wall == "bottom":
        return np.stack([s, zero], -1), np.stack([one, zero], -1), np.stack([zero, -one], -1)
    if wall == "top":
        return np.stack([s, one], -1), np.stack([one, zero], -1), np.stack([zero, one], -1)
    raise UnsupportedScenarioError(f"no layer strip for wall {wall!r}")


def layer_walls(domain: Domain):
    if domain.kind == DISK:
        return ("circle",)
    if set(domain.spec.sigma) != {"left", "right"}:
        raise UnsupportedScenarioError("the rectangle layer needs both side walls controlled")
    return ("bottom", "top")


def kitchen_extent(domain: Domain):
    """``(s_min, s_max)`` of the extended walls; the full circle on the disk."""
    if domain.kind == DISK:
        return 0.0, 2 * np.pi
    d, L = domain.spec.kitchen_depth, domain.spec.length
    lo = -d if "left" in domain.spec.sigma else 0.0
    hi = L + d if "right" in domain.spec.sigma else L
    return lo, hi


def omega_wall_mask(domain: Domain, s):
    """Wall positions that belong to the physical (uncontrolled) wall."""
    s = np.asarray(s, dtype=float)
    if domain.kind == DISK:
        th = np.angle(np.exp(1j * s))
        return np.abs(th) >= float(domain.spec.sigma)
    return (s >= 0.0) & (s <= domain.spec.length)


# ---------------------------------------------------------------------------
# coefficients


@dataclass
class LayerCoefficients:
    """Wall coefficients per unit envelope, sampled on uniform ``s_nodes``.

    ``speed`` is the tangential conveyor speed, ``u0_flat`` the drift rate
    ``d_n(u0 . n)`` (the limit of ``(u0 . n) / (-phi)`` at the wall),
    ``stretch`` the rate ``tau . (tau . grad) u0`` and ``g0 = 2 chi N(u0)``
    the Neumann datum.  Transport terms are multiplied by ``envelope.eta(t)``,
    the Neumann datum by ``g_envelope.eta(t)``.
    """

    kind: str
    walls: tuple
    s_nodes: np.ndarray
    speed: np.ndarray
    u0_flat: np.ndarray
    stretch: np.ndarray
    g0: np.ndarray
    envelope: object = field(default_factory=Steady)
    g_envelope: object = None
    periodic: bool = False
    taper: object = None

    def __post_init__(self):
        if self.g_envelope is None:
            self.g_envelope = self.envelope
        shape = (len(self.walls), len(self.s_nodes))
        for name in ("speed", "u0_flat", "stretch", "g0"):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), shape).copy()
            if not np.all(np.isfinite(arr)):
                raise DataError(f"layer coefficient {name} is not finite")
            setattr(self, name, arr)

    @classmethod
    def constant(cls, kind, walls, s_nodes, speed=0.0, u0_flat=0.0, stretch=0.0, g0=0.0,
                 envelope=None, g_envelope=None, periodic=False):
        return cls(kind, tuple(walls), np.asarray(s_nodes, dtype=float), speed, u0_flat, stretch, g0,
                   envelope if envelope is not None else Steady(), g_envelope, periodic)

    @property
    def uniform_speed(self):
        """The common wall speed if it does not vary along any wall, else ``None``."""
        a = self.speed
        if np.max(np.abs(a - a.flat[0])) <= 1e-10 * (1.0 + np.abs(a).max()):
            return float(a.flat[0])
        return None

    @property
    def is_conveyor(self):
        """Rectangle-scenario coefficients: uniform speed, no drift, no stretching."""
        return self.uniform_speed is not None and not np.any(self.u0_flat) and not np.any(self.stretch)

    def _sample(self, arr, s):
        h = self.s_nodes[1] - self.s_nodes[0]
        mode = PERIODIC if self.periodic else CLAMP
        return np.stack([interp1(arr[w], self.s_nodes[0], h, s[w], mode=mode) for w in range(len(self.walls))])

    def sample(self, name, s):
        """Coefficient ``name`` at positions ``s`` of shape ``(n_walls, n)``."""
        out = self._sample(getattr(self, name), np.asarray(s, dtype=float))
        if name == "g0" and self.taper is not None:
            out = out * self.taper(s)
        return out

    def g_step(self, t0, t1, s_start, moving):
        """``int_{t0}^{t1} g`` per column (positions move with the conveyor if ``moving``)."""
        env = self.g_envelope
        if not moving:
            return self.sample("g0", s_start) * float(env.cumulative(t1) - env.cumulative(t0))
        speed = self.uniform_speed
        M0 = float(self.envelope.cumulative(t0))
        total = np.zeros(np.shape(s_start))
        for xq, wq in zip(_GAUSS_X, _GAUSS_W):
            tq = t0 + xq * (t1 - t0)
            pos = s_start + speed * (float(self.envelope.cumulative(tq)) - M0)
            total += wq * float(env.eta(tq)) * self.sample("g0", pos)
        return total * (t1 - t0)


def _kitchen_taper(domain: Domain):
    """Smooth cut-off of the Neumann datum across the outer half of each kitchen."""
    if domain.kind == DISK:
        return None
    d, L = domain.spec.kitchen_depth, domain.spec.length
    sig = domain.spec.sigma

    def taper(s):
        s = np.asarray(s, dtype=float)
        out = np.ones_like(s)
        if "left" in sig:
            out = out * smooth_step((s + d) / (0.5 * d))
        if "right" in sig:
            out = out * smooth_step((L + d - s) / (0.5 * d))
        return out

    return taper


def build_layer_coefficients(domain: Domain, u0, friction_alpha, envelope=None, tol=1e-6) -> LayerCoefficients:
    """Wall coefficients of the layer equation for the flow ``u0``.

    ``u0`` is either a ``VectorField`` (taken as the spatial profile, with a
    unit envelope unless ``envelope`` is given) or a potential flow exposing
    ``grad_alpha`` and ``envelope``.
    """
    if hasattr(u0, "grad_alpha"):
        envelope = envelope if envelope is not None else u0.envelope
        u0 = u0.grad_alpha
    if envelope is None:
        envelope = Steady()
    g = domain.grid
    if not g.compatible(u0.grid):
        raise DataError("u0 is not sampled on the domain grid")
    walls = layer_walls(domain)
    scale = 1.0 + u0.max_abs()
    tr, mask = normal_trace(u0), domain.controlled_mask()
    for name, vals in tr.walls.items():
        bad = np.abs(vals[~mask[name]])
        if bad.size and bad.max() > tol * scale:
            raise DataError(f"u0 has normal component {bad.max():.3e} on uncontrolled wall {name!r}")

    # J[i, j] = d_j u_i on the grid
    J = np.stack([grad(ScalarField(g, u0.values[i])).values for i in range(2)])
    rows = []
    for wall in walls:
        if domain.kind == DISK:
            uw = np.tensordot(_RING_WEIGHTS, u0.values[:, -3:, :], axes=([0], [1]))
            Jw = np.tensordot(_RING_WEIGHTS, J[:, :, -3:, :], axes=([0], [2]))
            s = g.y
        else:
            j = 0 if wall == "bottom" else -1
            uw, Jw, s = u0.values[:, :, j], J[:, :, :, j], g.x
        _, tau, n = wall_frame(domain.kind, wall, s)
        tau, n = tau.T, n.T
        Jn = np.einsum("ijk,jk->ik", Jw, n)
        Jt = np.einsum("ijk,jk->ik", Jw, tau)
        JTn = np.einsum("jik,jk->ik", Jw, n)
        speed = np.sum(tau * uw, axis=0)
        flat = np.sum(n * Jn, axis=0)
        stretch = np.sum(tau * Jt, axis=0)
        N = 0.5 * np.sum(tau * (Jn + JTn), axis=0) + friction_alpha * speed
        rows.append((speed, flat, stretch, 2.0 * N))
    speed, flat, stretch, g0 = (np.array([r[k] for r in rows]) for k in range(4))
    s_nodes = g.y.copy() if domain.kind == DISK else g.x.copy()
    # round-off noise of the Poisson solve would defeat the conveyor detection
    for arr in (flat, stretch):
        arr[np.abs(arr) < 1e-9 * scale] = 0.0
    return LayerCoefficients(
        domain.kind, walls, s_nodes, speed, flat, stretch, g0, envelope,
        periodic=domain.kind == DISK, taper=_kitchen_taper(domain),
    )


# ---------------------------------------------------------------------------
# profile


@dataclass
class BoundaryLayerProfile:
    """Tangential layer component ``values[wall, s, z]`` at time ``t``.

    The last ``z`` node is the truncation point ``Z_max`` where the profile
    is held at zero.
    """

    s_grid: np.ndarray
    z_grid: np.ndarray
    values: np.ndarray
    t: float
    kind: str
    walls: tuple
    frame: str = EULERIAN
    periodic: bool = False
    decay_tol: float = 1e-6

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        want = (len(self.walls), len(self.s_grid), len(self.z_grid))
        if self.values.shape != want:
            raise DataError(f"profile values have shape {self.values.shape}, expected {want}")
        if not np.all(np.isfinite(self.values)):
            raise DataError("layer profile is not finite")

    @property
    def hs(self):
        return float(self.s_grid[1] - self.s_grid[0])

    @property
    def hz(self):
        return float(self.z_grid[1] - self.z_grid[0])

    @property
    def z_max(self):
        return float(self.z_grid[-1])

    def z_weights(self):
        w = np.full(len(self.z_grid), self.hz)
        w[[0, -1]] *= 0.5
        return w

    def frames(self):
        """Wall points, tangents and normals, each ``(n_walls, n_s, 2)``."""
        parts = [wall_frame(self.kind, w, self.s_grid) for w in self.walls]
        return tuple(np.stack([p[k] for p in parts]) for k in range(3))

    def vectors(self):
        """Full vectors ``(n_walls, n_s, n_z, 2)`` rebuilt from the tangent frame."""
        _, tau, _ = self.frames()
        return self.values[..., None] * tau[:, :, None, :]

    def normal_component(self):
        _, _, n = self.frames()
        return np.sum(self.vectors() * n[:, :, None, :], axis=-1)

    def with_values(self, values, t=None, s_grid=None):
        return replace(self, values=values, t=self.t if t is None else t,
                       s_grid=self.s_grid if s_grid is None else s_grid)

    def copy(self):
        return self.with_values(self.values.copy(), s_grid=self.s_grid.copy())

    def l2_sq(self, s_mask=None):
        """``sum_s hs int |v|^2 dz`` over all walls (optionally a subset of ``s``)."""
        dens = np.einsum("wsz,z->ws", self.values**2, self.z_weights())
        if s_mask is not None:
            dens = np.where(s_mask, dens, 0.0)
        return float(np.sum(dens) * self.hs)

    def dump(self, path):
        """Binary checkpoint: header ``(n_walls, n_s, n_z, t)``, ``s``, ``z``, values."""
        head = np.array([len(self.walls), len(self.s_grid), len(self.z_grid), self.t])
        dump_binary(np.concatenate([head, self.s_grid, self.z_grid, self.values.ravel()]), path)

    @classmethod
    def load(cls, path, kind, walls, frame=EULERIAN, periodic=False):
        raw = load_binary(path, (-1,))
        nw, ns, nz = (int(v) for v in raw[:3])
        s = raw[4 : 4 + ns]
        z = raw[4 + ns : 4 + ns + nz]
        vals = raw[4 + ns + nz :].reshape(nw, ns, nz)
        return cls(s, z, vals, float(raw[3]), kind, tuple(walls), frame, periodic)


def init_layer(domain: Domain, frame=AUTO, z_max=20.0, h_z=0.05, h_s=None, travel=0.0,
               values_fn=None, decay_tol=1e-6) -> BoundaryLayerProfile:
    """Zero (or ``values_fn(s, z, wall)``) profile on the walls of the extended domain.

    In the Lagrangian frame the labels extend ``travel`` upstream of the
    kitchen, so that every column that reaches the walls by the end of the
    active phase is present from the start.
    """
    walls = layer_walls(domain)
    if z_max <= 0 or h_z <= 0 or z_max / h_z < 8:
        raise ConfigError("fast-variable grid needs z_max > 0 and at least 8 cells")
    nz = int(round(z_max / h_z))
    z = np.linspace(0.0, nz * h_z, nz + 1)
    lo, hi = kitchen_extent(domain)
    if domain.kind == DISK:
        if frame == LAGRANGIAN:
            raise UnsupportedScenarioError("the disk layer uses the Eulerian frame")
        frame, periodic = EULERIAN, True
        ns = domain.grid.shape[1]
        s = np.arange(ns) * (2 * np.pi / ns)
    else:
        frame = LAGRANGIAN if frame == AUTO else frame
        periodic = False
        h = h_s if h_s is not None else domain.grid.hx
        start = lo - (travel if frame == LAGRANGIAN else 0.0)
        ns = int(np.ceil((hi - start) / h - 1e-9)) + 1
        s = start + h * np.arange(ns)
    vals = np.zeros((len(walls), len(s), len(z)))
    if values_fn is not None:
        for k, w in enumerate(walls):
            S, Z = np.meshgrid(s, z, indexing="ij")
            vals[k] = np.broadcast_to(values_fn(S, Z, w), S.shape)
        if not periodic:
            vals[:, (s < lo - 1e-12) | (s > hi + 1e-12)] = 0.0
        vals[..., -1] = 0.0
    return BoundaryLayerProfile(s, z, vals, 0.0, domain.kind, walls, frame, periodic, decay_tol)


# ---------------------------------------------------------------------------
# stepping


@lru_cache(maxsize=16)
def _banded(nz, hz, dt, theta):
    """``I - theta dt A`` in banded storage; ``A`` is the Neumann/Dirichlet z-Laplacian."""
    n = nz - 1
    c = theta * dt / hz**2
    ab = np.zeros((3, n))
    ab[1] = 1 + 2 * c
    ab[0, 1:] = -c
    ab[2, :-1] = -c
    ab[0, 1] = -2 * c  # ghost row at z = 0
    return ab


def _apply_laplacian(v, hz):
    """``A v`` on the unknowns (all nodes but ``Z_max``), homogeneous Neumann at 0."""
    out = np.empty_like(v[..., :-1])
    out[..., 0] = 2 * (v[..., 1] - v[..., 0])
    out[..., 1:] = v[..., 2:] - 2 * v[..., 1:-1] + v[..., :-2]
    return out / hz**2


def diffuse(values, hz, dt, theta=0.5, flux=None, source=None):
    """One theta-step of ``v_t = v_zz`` with ``-v_z(0)`` step flux ``flux`` and step source.

    ``flux`` is the time integral of ``g`` over the step and ``source`` the
    time integral of the source; both enter as amounts, so the discrete
    zeroth moment changes by exactly ``-flux + int source``.
    """
    nz = values.shape[-1]
    lead = values.shape[:-1]
    rhs = values[..., :-1].copy()
    if theta < 1:
        rhs += (1 - theta) * dt * _apply_laplacian(values, hz)
    if flux is not None:
        rhs[..., 0] -= 2.0 * np.asarray(flux) / hz
    if source is not None:
        rhs += source[..., :-1]
    sol = solve_banded((1, 1), _banded(nz, hz, float(dt), float(theta)), rhs.reshape(-1, nz - 1).T,
                       check_finite=False)
    out = np.zeros_like(values)
    out[..., :-1] = sol.T.reshape(lead + (nz - 1,))
    return out


def _foot_generic(coeffs, s, dM):
    """Characteristic foot of ``ds/dM = a(s)`` (``M`` = cumulative envelope), RK4 in ``M``."""
    h = -dM
    k1 = coeffs.sample("speed", s)
    k2 = coeffs.sample("speed", s + 0.5 * h * k1)
    k3 = coeffs.sample("speed", s + 0.5 * h * k2)
    k4 = coeffs.sample("speed", s + h * k3)
    return s + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _advect_s(values, s_grid, periodic, foot):
    h = s_grid[1] - s_grid[0]
    mode = PERIODIC if periodic else FILL
    nz = values.shape[-1]
    zi = np.broadcast_to(np.arange(nz, dtype=float), (len(s_grid), nz))
    out = np.empty_like(values)
    for w in range(values.shape[0]):
        px = np.broadcast_to(foot[w][:, None], (len(s_grid), nz))
        out[w] = interp2(values[w], s_grid[0], h, 0.0, 1.0, px, zi, fill=0.0, mode_x=mode, mode_y=CLAMP)
    return out


def _zeta_step(zeta, v, coeffs, t0, t1, s_start, moving):
    """Time integral of the kitchen source over the step, shape of ``v.values``."""
    if zeta is None:
        return None
    if hasattr(zeta, "step_amount"):
        return zeta.step_amount(v, coeffs, t0, t1, s_start, moving)
    total = np.zeros_like(v.values)
    M0 = float(coeffs.envelope.cumulative(t0))
    for xq, wq in zip(_GAUSS_X, _GAUSS_W):
        tq = t0 + xq * (t1 - t0)
        pos = s_start
        if moving:
            pos = s_start + coeffs.uniform_speed * (float(coeffs.envelope.cumulative(tq)) - M0)
        total += wq * np.asarray(zeta(tq, pos, v.z_grid))
    return total * (t1 - t0)


def check_decay(v: BoundaryLayerProfile):
    """Watchdog on the truncation: the last free node must be negligible."""
    peak = float(np.max(np.abs(v.values))) if v.values.size else 0.0
    tail = float(np.max(np.abs(v.values[..., -2]))) if v.values.size else 0.0
    if peak > 0 and tail > v.decay_tol * peak:
        raise DomainSizeError(
            f"layer tail {tail:.3e} at z = {v.z_grid[-2]:.3g} exceeds decay_tol x peak; raise Z_max"
        )


def step_layer(v: BoundaryLayerProfile, coeffs: LayerCoefficients, zeta_v=None, dt=1e-3,
               path=AUTO, theta=0.5) -> BoundaryLayerProfile:
    """Advance the layer equation by ``dt``.

    Splitting: transport along the wall, stretching and the ``z``-drift are
    explicit (semi-Lagrangian, exact integrating factors); diffusion in ``z``
    with the Neumann datum and the source is a theta-scheme (default
    Crank-Nicolson, unconditionally stable for ``theta >= 1/2``).
    ``path`` selects the conveyor (``reduced``) or the general (``generic``)
    transport; ``auto`` picks the reduced one when the coefficients allow it.
    """
    if not (np.isfinite(dt) and dt > 0):
        raise StepSizeError(f"time step must be positive, got {dt}")
    if not 0.0 <= theta <= 1.0:
        raise ConfigError(f"theta must lie in [0, 1], got {theta}")
    if theta < 0.5:
        bound = v.hz**2 / (2.0 * (1.0 - 2.0 * theta))
        if dt > bound:
            raise StepSizeError(f"dt = {dt:.3e} exceeds the stability bound {bound:.3e} for theta = {theta}")
    if coeffs.walls != v.walls:
        raise DataError("coefficients and profile carry different walls")
    if path == AUTO:
        path = REDUCED if coeffs.is_conveyor else GENERIC
    if path == REDUCED and not coeffs.is_conveyor:
        raise UnsupportedScenarioError("reduced path needs uniform speed and no drift or stretching")

    t0, t1 = v.t, v.t + dt
    dM = float(coeffs.envelope.cumulative(t1) - coeffs.envelope.cumulative(t0))
    vals = v.values
    s_start = np.broadcast_to(v.s_grid, (len(v.walls), len(v.s_grid)))
    s_new = v.s_grid
    moving = v.frame == LAGRANGIAN

    if moving:
        if coeffs.uniform_speed is None:
            raise UnsupportedScenarioError("the Lagrangian frame needs a uniform wall speed")
        if path == REDUCED:
            s_new = v.s_grid + coeffs.uniform_speed * dM
        else:
            s_new = _foot_generic(coeffs, s_start, -dM)[0]
    elif dM != 0.0:
        if path == REDUCED:
            a = coeffs.uniform_speed
            if a != 0.0:
                vals = _advect_s(vals, v.s_grid, v.periodic, s_start - a * dM)
        else:
            vals = _advect_s(vals, v.s_grid, v.periodic, _foot_generic(coeffs, s_start, dM))

    if path == GENERIC and dM != 0.0:
        s_here = np.broadcast_to(s_new, s_start.shape)
        vals = vals * np.exp(-coeffs.sample("stretch", s_here) * dM)[..., None]
        b = coeffs.sample("u0_flat", s_here)
        if np.any(b):
            # characteristics of  u0_flat z d_z : z(t) = z0 exp(b M)
            zi = v.z_grid[None, :] * np.exp(-b * dM)[..., None] / v.hz
            out = np.empty_like(vals)
            for w in range(vals.shape[0]):
                si = np.broadcast_to(np.arange(len(v.s_grid), dtype=float)[:, None], zi[w].shape)
                out[w] = interp2(vals[w], 0.0, 1.0, 0.0, 1.0, si, zi[w], fill=0.0, mode_x=CLAMP, mode_y=FILL)
            vals = out

    flux = coeffs.g_step(t0, t1, s_start, moving)
    src = _zeta_step(zeta_v, v, coeffs, t0, t1, s_start, moving)
    vals = diffuse(vals, v.hz, dt, theta, flux, src)
    out = v.with_values(vals, t=t1, s_grid=np.array(s_new, dtype=float))
    check_decay(out)
    return out


def evolve_layer(v, coeffs, zeta_v, t_end, dt, path=AUTO, theta=0.5, callback=None):
    """Repeated ``step_layer`` up to ``t_end`` with the last step shortened to land on it."""
    n = max(1, int(np.ceil((t_end - v.t) / dt - 1e-9)))
    h = (t_end - v.t) / n
    if h <= 0:
        return v
    for _ in range(n):
        v = step_layer(v, coeffs, zeta_v, h, path, theta)
        if callback is not None:
            callback(v)
    return v


# ---------------------------------------------------------------------------
# physical space


def _wall_distance(kind, wall, pts):
    x, y = pts[..., 0], pts[..., 1]
    if kind == DISK:
        return 1.0 - np.hypot(x, y), np.mod(np.arctan2(y, x), 2 * np.pi)
    return (y if wall == "bottom" else 1.0 - y), x


def sample_layer_in_domain(v: BoundaryLayerProfile, domain: Domain, eps) -> VectorField:
    """``sqrt(eps) chi v(t, s(x), phi(x) / sqrt(eps)) tau`` on the domain grid."""
    if not eps > 0:
        raise ConfigError("eps must be positive")
    g = domain.grid
    pts = g.points()
    out = np.zeros((2,) + g.shape)
    root = np.sqrt(eps)
    b = domain.chi_support
    for k, wall in enumerate(v.walls):
        dist, s = _wall_distance(v.kind, wall, pts)
        chi = 1.0 - smooth_step((dist - 0.5 * b) / (0.5 * b))
        near = chi > 0
        if not np.any(near):
            continue
        mode = PERIODIC if v.periodic else FILL
        val = interp2(v.values[k], v.s_grid[0], v.hs, 0.0, v.hz, s[near], dist[near] / root,
                      fill=0.0, mode_x=mode, mode_y=FILL)
        _, tau, _ = wall_frame(v.kind, wall, s[near])
        amp = root * chi[near] * val
        out[0][near] += amp * tau[:, 0]
        out[1][near] += amp * tau[:, 1]
    return VectorField(g, out)
