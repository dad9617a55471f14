"""Physical domain, controlled boundary part and the extended ("kitchen") domain.

The level set ``phi`` is positive inside, vanishes on the boundary and is
the signed distance near it.  The rectangle is ``[0, L] x [0, 1]``; the
disk is the unit disk.  Both are built analytically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, GeometryError
from .fields import BoundaryField, Grid, ScalarField, VectorField, boundary_samples

RECTANGLE = "rectangle"
DISK = "disk"
RECT_WALLS = ("left", "right")


@dataclass(frozen=True)
class DomainSpec:
    """Geometry configuration.

    For the rectangle ``sigma`` is a subset of ``{"left", "right"}``; for the
    disk it is the half-opening ``theta0`` of the arc ``|theta| < theta0``.
    On the disk ``nx``/``ny`` count radial/angular cells.
    """

    kind: str = RECTANGLE
    length: float = 2.0
    sigma: tuple | float = ("left", "right")
    kitchen_depth: float = 0.5
    nx: int = 64
    ny: int = 64
    collar_width: float | None = None
    chi_width: float | None = None

    def resolved_collar(self):
        if self.collar_width is not None:
            return self.collar_width
        return 0.2 if self.kind == RECTANGLE else 0.3

    def resolved_chi(self):
        return self.chi_width if self.chi_width is not None else 0.75 * self.resolved_collar()


def smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
    b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


class Domain:
    """Sampled geometry.  Immutable after construction."""

    def __init__(self, spec: DomainSpec, grid: Grid):
        self.spec = spec
        self.grid = grid
        self.collar = spec.resolved_collar()
        self.chi_support = spec.resolved_chi()
        pts = grid.points()
        self.phi = ScalarField(grid, self.phi_at(pts), "length")
        nrm = self.normal_at(pts)
        self.normal = VectorField(grid, np.moveaxis(nrm, -1, 0))
        self.chi = ScalarField(grid, self.chi_at(pts))
        self.boundary_tags = {
            name: np.where(mask, "controlled", "uncontrolled") for name, mask in self.controlled_mask().items()
        }

    @property
    def kind(self):
        return self.spec.kind

    @property
    def length(self):
        return self.spec.length if self.kind == RECTANGLE else 2.0

    # -- level set -----------------------------------------------------------

    def phi_at(self, points):
        p = np.asarray(points, dtype=float)
        x, y = p[..., 0], p[..., 1]
        if self.kind == DISK:
            return 1.0 - np.hypot(x, y)
        L = self.spec.length
        inside = np.minimum(np.minimum(x, L - x), np.minimum(y, 1.0 - y))
        dx = np.maximum(np.maximum(-x, x - L), 0.0)
        dy = np.maximum(np.maximum(-y, y - 1.0), 0.0)
        return np.where(inside >= 0, inside, -np.hypot(dx, dy))

    def normal_at(self, points):
        """Outward unit normal, extended constant along ``grad phi`` lines."""
        p = np.asarray(points, dtype=float)
        x, y = p[..., 0], p[..., 1]
        if self.kind == DISK:
            r = np.hypot(x, y)
            safe = np.where(r > 0, r, 1.0)
            return np.stack([np.where(r > 0, x / safe, 1.0), np.where(r > 0, y / safe, 0.0)], axis=-1)
        L = self.spec.length
        # nearest wall inside (ties: bottom, top, left, right)
        dists = np.stack([y, 1.0 - y, x, L - x], axis=-1)
        normals = np.array([[0.0, -1.0], [0.0, 1.0], [-1.0, 0.0], [1.0, 0.0]])
        n_in = normals[np.argmin(dists, axis=-1)]
        cx, cy = np.clip(x, 0, L), np.clip(y, 0, 1.0)
        ox, oy = x - cx, y - cy
        d = np.hypot(ox, oy)
        safe = np.where(d > 0, d, 1.0)
        n_out = np.stack([ox / safe, oy / safe], axis=-1)
        return np.where((d > 0)[..., None], n_out, n_in)

    def chi_at(self, points):
        phi = self.phi_at(points)
        b = self.chi_support
        return 1.0 - smooth_step((phi - 0.5 * b) / (0.5 * b))

    def in_collar(self, points):
        """Points whose normal is well defined (corner cells excluded)."""
        p = np.asarray(points, dtype=float)
        phi = self.phi_at(p)
        ok = np.abs(phi) <= self.collar
        if self.kind == RECTANGLE:
            x, y = p[..., 0], p[..., 1]
            L = self.spec.length
            near_h = np.minimum(np.abs(x), np.abs(L - x)) < self.collar
            near_v = np.minimum(np.abs(y), np.abs(1.0 - y)) < self.collar
            inside_box = (x >= 0) & (x <= L) & (y >= 0) & (y <= 1)
            ok &= ~(near_h & near_v & inside_box)
        return ok

    def in_omega(self, points):
        return self.phi_at(points) >= 0

    def in_extended(self, points):
        """Membership in the extended domain (Omega plus kitchen)."""
        p = np.asarray(points, dtype=float)
        x, y = p[..., 0], p[..., 1]
        d = self.spec.kitchen_depth
        if self.kind == DISK:
            r = np.hypot(x, y)
            th = np.arctan2(y, x)
            return (r <= 1.0) | ((r <= 1.0 + d) & (np.abs(th) < self.spec.sigma))
        L = self.spec.length
        lo = -d if "left" in self.spec.sigma else 0.0
        hi = L + d if "right" in self.spec.sigma else L
        return (x >= lo) & (x <= hi) & (y >= 0) & (y <= 1)

    # -- boundary ------------------------------------------------------------

    def controlled_mask(self):
        """Per-wall boolean arrays over the grid's boundary samples."""
        out = {}
        for name, (px, py, _, _) in boundary_samples(self.grid).items():
            if self.kind == DISK:
                th = np.arctan2(py, px)
                out[name] = np.abs(th) < self.spec.sigma
            else:
                # closed vertical walls, corners included
                out[name] = np.full(px.shape, name in self.spec.sigma)
        return out

    def sigma_indicator(self):
        m = self.controlled_mask()
        return BoundaryField(self.grid, {k: v.astype(float) for k, v in m.items()})

    def uncontrolled_walls(self):
        if self.kind == DISK:
            return ["circle"]
        return [w for w in ("bottom", "top", "left", "right") if w not in self.spec.sigma]


def tangential_part(vec, point, domain: Domain):
    """``vec - (vec . n) n`` with the extended normal at ``point``."""
    vec = np.asarray(vec, dtype=float)
    point = np.asarray(point, dtype=float)
    if not np.all(domain.in_collar(point) | domain.in_omega(point)):
        raise GeometryError(f"point {point.tolist()} is outside the normal-field collar")
    n = domain.normal_at(point)
    return vec - np.sum(vec * n, axis=-1, keepdims=True) * n


def build_domain(spec: DomainSpec) -> Domain:
    if spec.kind not in (RECTANGLE, DISK):
        raise ConfigError(f"unknown domain kind {spec.kind!r}")
    if spec.kitchen_depth <= 0:
        raise ConfigError("kitchen_depth must be positive")
    if min(spec.nx, spec.ny) < 8:
        raise ConfigError("resolution must be at least 8 cells per side")
    if spec.resolved_chi() > spec.resolved_collar():
        raise ConfigError("chi support must fit inside the collar")
    if spec.kind == RECTANGLE:
        sigma = tuple(spec.sigma) if not isinstance(spec.sigma, str) else (spec.sigma,)
        if not sigma:
            raise ConfigError("controlled boundary part sigma is empty")
        bad = set(sigma) - set(RECT_WALLS)
        if bad:
            raise ConfigError(f"sigma walls must be among {RECT_WALLS}, got {sorted(bad)}")
        if spec.length <= 0:
            raise ConfigError("rectangle length must be positive")
        spec = DomainSpec(**{**spec.__dict__, "sigma": sigma})
        grid = Grid.box(0.0, spec.length, 0.0, 1.0, spec.nx, spec.ny)
    else:
        if not (0 < float(spec.sigma) <= np.pi):
            raise ConfigError("disk sigma arc half-opening must lie in (0, pi]")
        grid = Grid.disk(spec.nx, spec.ny)
    return Domain(spec, grid)
