"""Grid-sampled fields and the discrete calculus used by every stage.

Two layouts are supported:

* ``cartesian``: collocated nodes on a box, boundary nodes included.
* ``polar``: cell-centred radii ``(i + 1/2) dr`` on the unit disk with a
  periodic angle; the outer circle is a cell face.

Vector fields always store Cartesian components, whatever the layout.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DataError, ShapeError, SolverError

CARTESIAN = "cartesian"
POLAR = "polar"
WALLS = ("bottom", "right", "top", "left")


@dataclass(frozen=True, eq=False)
class Grid:
    """Tensor-product sampling grid.

    ``x``/``y`` are the axis-0/axis-1 coordinates (``r``/``theta`` for the
    polar layout).  Values are indexed ``[i, j]`` with ``i`` along axis 0.
    """

    x: np.ndarray
    y: np.ndarray
    layout: str = CARTESIAN
    mask: np.ndarray | None = None

    def __post_init__(self):
        if self.layout not in (CARTESIAN, POLAR):
            raise ValueError(f"unknown grid layout {self.layout!r}")
        if len(self.x) < 2 or len(self.y) < 2:
            raise ValueError("grid needs at least two samples per axis")
        if self.hx <= 0 or self.hy <= 0:
            raise ValueError("grid spacings must be positive")
        if self.mask is None:
            object.__setattr__(self, "mask", np.ones(self.shape, dtype=bool))

    @classmethod
    def box(cls, x0, x1, y0, y1, nx, ny):
        """Node grid with ``nx`` x ``ny`` cells on ``[x0, x1] x [y0, y1]``."""
        return cls(np.linspace(x0, x1, nx + 1), np.linspace(y0, y1, ny + 1))

    @classmethod
    def disk(cls, nr, ntheta, radius=1.0):
        dr = radius / nr
        r = (np.arange(nr) + 0.5) * dr
        theta = np.arange(ntheta) * (2 * np.pi / ntheta)
        return cls(r, theta, POLAR)

    @property
    def shape(self):
        return (len(self.x), len(self.y))

    @property
    def hx(self):
        return float(self.x[1] - self.x[0])

    @property
    def hy(self):
        return float(self.y[1] - self.y[0])

    @property
    def is_polar(self):
        return self.layout == POLAR

    def points(self):
        """Cartesian coordinates of every sample, shape ``(n0, n1, 2)``."""
        a, b = np.meshgrid(self.x, self.y, indexing="ij")
        if self.is_polar:
            return np.stack([a * np.cos(b), a * np.sin(b)], axis=-1)
        return np.stack([a, b], axis=-1)

    def weights(self):
        """Quadrature weights: trapezoid on nodes, cell areas on the disk."""
        if self.is_polar:
            w = np.outer(self.x * self.hx, np.full(len(self.y), self.hy))
        else:
            wx = np.full(len(self.x), self.hx)
            wy = np.full(len(self.y), self.hy)
            wx[[0, -1]] *= 0.5
            wy[[0, -1]] *= 0.5
            w = np.outer(wx, wy)
        return np.where(self.mask, w, 0.0)

    def compatible(self, other):
        return self is other or (
            self.layout == other.layout
            and self.shape == other.shape
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
        )


def _check_finite(values, what):
    if not np.all(np.isfinite(values)):
        raise DataError(f"{what} contains non-finite values")


@dataclass(eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray
    units: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ShapeError(f"scalar values {self.values.shape} do not match grid {self.grid.shape}")
        _check_finite(self.values, "scalar field")

    @classmethod
    def from_function(cls, grid, func, units=""):
        p = grid.points()
        return cls(grid, np.broadcast_to(func(p[..., 0], p[..., 1]), grid.shape).copy(), units)

    @classmethod
    def zeros(cls, grid, units=""):
        return cls(grid, np.zeros(grid.shape), units)

    def _other(self, other):
        if isinstance(other, ScalarField):
            if not self.grid.compatible(other.grid):
                raise ShapeError("scalar fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return ScalarField(self.grid, self.values + self._other(other), self.units)

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - self._other(other), self.units)

    def __mul__(self, other):
        return ScalarField(self.grid, self.values * self._other(other), self.units)

    __rmul__ = __mul__
    __radd__ = __add__

    def __neg__(self):
        return ScalarField(self.grid, -self.values, self.units)

    def integral(self):
        return float(np.sum(self.grid.weights() * self.values))

    def mean(self):
        w = self.grid.weights()
        return float(np.sum(w * self.values) / np.sum(w))

    def norm(self):
        """L2 norm over the masked region."""
        return float(np.sqrt(np.sum(self.grid.weights() * self.values**2)))

    def max_abs(self, interior=False):
        vals = _interior(self.grid, self.values) if interior else self.values[self.grid.mask]
        return float(np.max(np.abs(vals))) if vals.size else 0.0


@dataclass(eq=False)
class VectorField:
    grid: Grid
    values: np.ndarray  # shape (2, n0, n1), Cartesian components
    units: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (2, *self.grid.shape):
            raise ShapeError(f"vector values {self.values.shape} do not match grid {self.grid.shape}")
        _check_finite(self.values, "vector field")

    @classmethod
    def from_function(cls, grid, func, units=""):
        p = grid.points()
        fx, fy = func(p[..., 0], p[..., 1])
        return cls(grid, np.stack([np.broadcast_to(fx, grid.shape), np.broadcast_to(fy, grid.shape)]), units)

    @classmethod
    def zeros(cls, grid, units=""):
        return cls(grid, np.zeros((2, *grid.shape)), units)

    @property
    def x(self):
        return ScalarField(self.grid, self.values[0], self.units)

    @property
    def y(self):
        return ScalarField(self.grid, self.values[1], self.units)

    def _other(self, other):
        if isinstance(other, VectorField):
            if not self.grid.compatible(other.grid):
                raise ShapeError("vector fields live on different grids")
            return other.values
        if isinstance(other, ScalarField):
            if not self.grid.compatible(other.grid):
                raise ShapeError("fields live on different grids")
            return other.values[None]
        return other

    def __add__(self, other):
        return VectorField(self.grid, self.values + self._other(other), self.units)

    def __sub__(self, other):
        return VectorField(self.grid, self.values - self._other(other), self.units)

    def __mul__(self, other):
        return VectorField(self.grid, self.values * self._other(other), self.units)

    __rmul__ = __mul__
    __radd__ = __add__

    def __neg__(self):
        return VectorField(self.grid, -self.values, self.units)

    def norm(self):
        return float(np.sqrt(np.sum(self.grid.weights() * np.sum(self.values**2, axis=0))))

    def max_abs(self):
        return float(np.max(np.hypot(self.values[0], self.values[1])[self.grid.mask]))


def _interior(grid, values):
    if grid.is_polar:
        return values[:-1]
    return values[1:-1, 1:-1]


# ---------------------------------------------------------------------------
# differential operators


def _diff(a, h, axis):
    """Centred differences; one-sided four-point stencils at the two ends.

    The end stencils share the centred stencil's leading error term
    ``+h^2 f'''/6``, so the error stays smooth across the edge and
    compositions such as ``div(grad)`` remain second order up to the wall.
    """
    a = np.moveaxis(a, axis, 0)
    out = np.empty_like(a)
    out[1:-1] = (a[2:] - a[:-2]) / (2 * h)
    if a.shape[0] >= 4:
        out[0] = (-4 * a[0] + 7 * a[1] - 4 * a[2] + a[3]) / (2 * h)
        out[-1] = (4 * a[-1] - 7 * a[-2] + 4 * a[-3] - a[-4]) / (2 * h)
    else:
        out[0] = (a[1] - a[0]) / h
        out[-1] = (a[-1] - a[-2]) / h
    return np.moveaxis(out, 0, axis)


def _d0(grid, a):
    return _diff(a, grid.hx, 0)


def _d1(grid, a):
    if grid.is_polar:
        return (np.roll(a, -1, axis=1) - np.roll(a, 1, axis=1)) / (2 * grid.hy)
    return _diff(a, grid.hy, 1)


def _polar_frame(grid):
    r, th = np.meshgrid(grid.x, grid.y, indexing="ij")
    return r, np.cos(th), np.sin(th)


def grad(s: ScalarField) -> VectorField:
    g = s.grid
    if g.is_polar:
        r, c, sn = _polar_frame(g)
        dr = _d0(g, s.values)
        dth = _d1(g, s.values) / r
        return VectorField(g, np.stack([c * dr - sn * dth, sn * dr + c * dth]))
    return VectorField(g, np.stack([_d0(g, s.values), _d1(g, s.values)]))


def _to_polar_components(v):
    r, c, sn = _polar_frame(v.grid)
    ur = c * v.values[0] + sn * v.values[1]
    ut = -sn * v.values[0] + c * v.values[1]
    return r, ur, ut


def div(v: VectorField) -> ScalarField:
    g = v.grid
    if g.is_polar:
        r, ur, ut = _to_polar_components(v)
        return ScalarField(g, (_d0(g, r * ur) + _d1(g, ut)) / r)
    return ScalarField(g, _d0(g, v.values[0]) + _d1(g, v.values[1]))


def curl2d(v: VectorField) -> ScalarField:
    g = v.grid
    if g.is_polar:
        r, ur, ut = _to_polar_components(v)
        return ScalarField(g, (_d0(g, r * ut) - _d1(g, ur)) / r)
    return ScalarField(g, _d0(g, v.values[1]) - _d1(g, v.values[0]))


def perp_grad(psi: ScalarField) -> VectorField:
    """``(d_y psi, -d_x psi)``; exactly divergence free for the operators above."""
    gx, gy = grad(psi).values
    return VectorField(psi.grid, np.stack([gy, -gx]))


# ---------------------------------------------------------------------------
# boundary data


@dataclass(eq=False)
class BoundaryField:
    """Scalar data on the boundary samples of a grid.

    Cartesian grids keep one array per wall (``bottom``/``top`` indexed by
    ``x``, ``left``/``right`` by ``y``; corners appear on two walls).  The
    disk keeps a single array indexed by angle at ``r = 1``.
    """

    grid: Grid
    walls: dict = field(default_factory=dict)

    @classmethod
    def from_function(cls, grid, func):
        """``func(x, y, nx, ny)`` evaluated at boundary points with outward normals."""
        walls = {}
        for name, (px, py, nx, ny) in boundary_samples(grid).items():
            walls[name] = np.asarray(np.broadcast_to(func(px, py, nx, ny), px.shape), dtype=float)
        return cls(grid, walls)

    @classmethod
    def zeros(cls, grid):
        return cls.from_function(grid, lambda x, y, nx, ny: 0.0 * x)

    def integral(self):
        """Trapezoid boundary integral (exact telescoping partner of the solvers)."""
        total = 0.0
        for name, vals in self.walls.items():
            total += float(np.sum(boundary_weights(self.grid)[name] * vals))
        return total

    def abs_integral(self):
        return sum(float(np.sum(boundary_weights(self.grid)[n] * np.abs(v))) for n, v in self.walls.items())


def boundary_samples(grid):
    """Boundary points and outward normals, keyed by wall name."""
    if grid.is_polar:
        th = grid.y
        return {"circle": (np.cos(th), np.sin(th), np.cos(th), np.sin(th))}
    x, y = grid.x, grid.y
    one_x, one_y = np.ones_like(x), np.ones_like(y)
    return {
        "bottom": (x, y[0] * one_x, 0 * one_x, -one_x),
        "right": (x[-1] * one_y, y, one_y, 0 * one_y),
        "top": (x, y[-1] * one_x, 0 * one_x, one_x),
        "left": (x[0] * one_y, y, -one_y, 0 * one_y),
    }


def boundary_weights(grid):
    if grid.is_polar:
        return {"circle": np.full(len(grid.y), grid.hy * (grid.x[-1] + grid.hx / 2))}
    wx = np.full(len(grid.x), grid.hx)
    wy = np.full(len(grid.y), grid.hy)
    wx[[0, -1]] *= 0.5
    wy[[0, -1]] *= 0.5
    return {"bottom": wx, "top": wx, "left": wy, "right": wy}


def normal_trace(v: VectorField) -> BoundaryField:
    """Outward normal component of ``v`` on the boundary samples."""
    g = v.grid
    if g.is_polar:
        # extrapolate the two outermost rings to r = 1
        r0, r1 = g.x[-2], g.x[-1]
        rb = r1 + g.hx / 2
        outer = v.values[:, -1] + (v.values[:, -1] - v.values[:, -2]) * (rb - r1) / (r1 - r0)
        th = g.y
        return BoundaryField(g, {"circle": outer[0] * np.cos(th) + outer[1] * np.sin(th)})
    vals = v.values
    return BoundaryField(
        g,
        {
            "bottom": -vals[1, :, 0],
            "right": vals[0, -1, :],
            "top": vals[1, :, -1],
            "left": -vals[0, 0, :],
        },
    )


# ---------------------------------------------------------------------------
# Poisson solvers


@lru_cache(maxsize=32)
def _neumann_system(grid):
    """Symmetric (weight-scaled) Neumann Laplacian, bordered for zero mean."""
    n0, n1 = grid.shape
    n = n0 * n1
    idx = np.arange(n).reshape(n0, n1)
    rows, cols, data = [], [], []

    def add(r, c, d):
        rows.append(r.ravel())
        cols.append(c.ravel())
        data.append(np.broadcast_to(d, r.shape).ravel().astype(float))

    if grid.is_polar:
        dr, dth = grid.hx, grid.hy
        r = grid.x
        rf = np.concatenate([[0.0], 0.5 * (r[1:] + r[:-1]), [r[-1] + dr / 2]])
        # weight-scaled rows: area * laplacian
        for i in range(n0):
            area = r[i] * dr * dth
            if i > 0:
                c = rf[i] * dth / dr
                add(idx[i], idx[i - 1], c)
                add(idx[i], idx[i], -c)
            if i < n0 - 1:
                c = rf[i + 1] * dth / dr
                add(idx[i], idx[i + 1], c)
                add(idx[i], idx[i], -c)
            c = area / (r[i] ** 2 * dth**2)
            add(idx[i], np.roll(idx[i], -1), c)
            add(idx[i], np.roll(idx[i], 1), c)
            add(idx[i], idx[i], -2 * c)
    else:
        w = grid.weights()
        hx, hy = grid.hx, grid.hy
        for axis, h in ((0, hx), (1, hy)):
            sl_a = [slice(None), slice(None)]
            sl_b = [slice(None), slice(None)]
            sl_a[axis] = slice(0, -1)
            sl_b[axis] = slice(1, None)
            a, b = idx[tuple(sl_a)], idx[tuple(sl_b)]
            # edge between neighbouring nodes carries weight of the shared half cells
            other = 1 - axis
            wo = np.full(grid.shape[other], grid.hy if axis == 0 else grid.hx)
            wo[[0, -1]] *= 0.5
            c = (wo / h)[None, :] if axis == 0 else (wo / h)[:, None]
            c = np.broadcast_to(c, a.shape)
            add(a, b, c)
            add(b, a, c)
            add(a, a, -c)
            add(b, b, -c)
        del w
    A = sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    wvec = grid.weights().ravel()
    K = sp.bmat([[A, wvec[:, None]], [wvec[None, :], None]], format="csc")
    return A, wvec, spla.splu(K)


def _flux_source(grid, flux: BoundaryField):
    """Weighted contribution of Neumann data, same telescoping as ``integral``."""
    b = np.zeros(grid.shape)
    bw = boundary_weights(grid)
    if grid.is_polar:
        b[-1] += bw["circle"] * flux.walls["circle"]
        return b
    b[:, 0] += bw["bottom"] * flux.walls["bottom"]
    b[:, -1] += bw["top"] * flux.walls["top"]
    b[0, :] += bw["left"] * flux.walls["left"]
    b[-1, :] += bw["right"] * flux.walls["right"]
    return b


def neumann_laplacian(s: ScalarField, flux: BoundaryField) -> ScalarField:
    """Compact Laplacian with Neumann ghost closure (the solver's own operator)."""
    A, wvec, _ = _neumann_system(s.grid)
    w = s.grid.weights()
    weighted = (A @ s.values.ravel()).reshape(s.grid.shape) + _flux_source(s.grid, flux)
    return ScalarField(s.grid, weighted / w)


def solve_neumann_poisson(grid_or_domain, rhs: ScalarField, flux: BoundaryField, tol_compat=1e-10, tol=1e-8):
    """Solve ``lap s = rhs``, ``d_n s = flux``, normalized to zero mean.

    A compatibility defect below ``tol_compat`` (relative to the data size)
    is removed by shifting ``rhs``; larger defects raise ``DataError``.
    """
    grid = getattr(grid_or_domain, "grid", grid_or_domain)
    if not grid.compatible(rhs.grid):
        raise ShapeError("rhs is not sampled on the solver grid")
    A, wvec, lu = _neumann_system(grid)
    w = grid.weights()
    area = w.sum()
    defect = rhs.integral() - flux.integral()
    scale = 1.0 + float(np.sum(w * np.abs(rhs.values))) + flux.abs_integral()
    if abs(defect) > tol_compat * scale:
        raise DataError(f"incompatible Neumann data: int(rhs) - int(flux) = {defect:.3e}")
    f = rhs.values - defect / area
    b = w * f - _flux_source(grid, flux)
    sol = lu.solve(np.concatenate([b.ravel(), [0.0]]))
    s = sol[:-1].reshape(grid.shape)
    resid = (A @ s.ravel() - b.ravel()).reshape(grid.shape) / w
    res = float(np.max(np.abs(resid)))
    if not np.isfinite(res) or res > tol * max(1.0, float(np.max(np.abs(f)))):
        raise SolverError("Neumann Poisson solve did not converge", res)
    return ScalarField(grid, s)


@lru_cache(maxsize=32)
def _dirichlet_system(grid):
    n0, n1 = grid.shape
    n = n0 * n1
    idx = np.arange(n).reshape(n0, n1)
    if grid.is_polar:
        dr, dth = grid.hx, grid.hy
        r = grid.x
        rf = np.concatenate([[0.0], 0.5 * (r[1:] + r[:-1]), [r[-1] + dr / 2]])
        rows, cols, data = [], [], []
        for i in range(n0):
            inv = 1.0 / (r[i] * dr * dr)
            diag = np.zeros(n1)
            if i > 0:
                rows.append(idx[i]); cols.append(idx[i - 1]); data.append(np.full(n1, rf[i] * inv))
                diag -= rf[i] * inv
            if i < n0 - 1:
                rows.append(idx[i]); cols.append(idx[i + 1]); data.append(np.full(n1, rf[i + 1] * inv))
                diag -= rf[i + 1] * inv
            else:
                # ghost psi_g = 2 psi_b - psi_i at the outer face
                diag -= 2 * rf[i + 1] * inv
            c = 1.0 / (r[i] ** 2 * dth**2)
            rows += [idx[i], idx[i]]
            cols += [np.roll(idx[i], -1), np.roll(idx[i], 1)]
            data += [np.full(n1, c), np.full(n1, c)]
            diag -= 2 * c
            rows.append(idx[i]); cols.append(idx[i]); data.append(diag)
        A = sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
        return A, spla.splu(A.tocsc())
    hx, hy = grid.hx, grid.hy
    inner = np.zeros(grid.shape, dtype=bool)
    inner[1:-1, 1:-1] = True
    main = np.where(inner, -2 / hx**2 - 2 / hy**2, 1.0).ravel()
    rows, cols, data = [np.arange(n)], [np.arange(n)], [main]
    ii = idx[1:-1, 1:-1].ravel()
    for off, c in ((n1, 1 / hx**2), (-n1, 1 / hx**2), (1, 1 / hy**2), (-1, 1 / hy**2)):
        rows.append(ii)
        cols.append(ii + off)
        data.append(np.full(ii.size, c))
    A = sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return A, spla.splu(A.tocsc())


def solve_dirichlet_poisson(grid, rhs: ScalarField, boundary: BoundaryField, tol=1e-8):
    """Solve ``lap s = rhs`` with ``s = boundary`` (compact stencil)."""
    A, lu = _dirichlet_system(grid)
    if grid.is_polar:
        dr = grid.hx
        rb = grid.x[-1] + dr / 2
        b = rhs.values.copy()
        b[-1] -= 2 * rb / (grid.x[-1] * dr * dr) * boundary.walls["circle"]
    else:
        b = rhs.values.copy()
        b[:, 0] = boundary.walls["bottom"]
        b[:, -1] = boundary.walls["top"]
        b[0, :] = boundary.walls["left"]
        b[-1, :] = boundary.walls["right"]
    s = lu.solve(b.ravel())
    res = float(np.max(np.abs(A @ s - b.ravel())))
    if not np.isfinite(res) or res > tol * max(1.0, float(np.max(np.abs(b)))):
        raise SolverError("Dirichlet Poisson solve did not converge", res)
    return ScalarField(grid, s.reshape(grid.shape))


def _stream_boundary(grid, trace: BoundaryField, tol=1e-9):
    """Boundary stream function: counter-clockwise running integral of ``u.n``."""
    net = trace.integral()
    if abs(net) > tol * (1.0 + trace.abs_integral()):
        raise DataError(f"normal trace has nonzero net flux {net:.3e}")
    if grid.is_polar:
        g = trace.walls["circle"]
        rb = grid.x[-1] + grid.hx / 2
        # periodic trapezoid running integral, closed exactly
        steps = 0.5 * (g + np.roll(g, -1)) * grid.hy * rb
        steps -= steps.mean()
        psi = np.concatenate([[0.0], np.cumsum(steps)[:-1]])
        return BoundaryField(grid, {"circle": psi})
    x, y = grid.x, grid.y

    def run(vals, coords):
        ds = np.abs(np.diff(coords))
        return np.concatenate([[0.0], np.cumsum(0.5 * (vals[1:] + vals[:-1]) * ds)])

    perimeter = 2 * (x[-1] - x[0]) + 2 * (y[-1] - y[0])
    bottom = run(trace.walls["bottom"], x)
    right = bottom[-1] + run(trace.walls["right"], y)
    top_rev = right[-1] + run(trace.walls["top"][::-1], x[::-1])
    left_rev = top_rev[-1] + run(trace.walls["left"][::-1], y[::-1])
    closing = left_rev[-1]
    # spread the (tiny) closing error along the perimeter
    sx = x - x[0]
    sy = y - y[0]
    lx, ly = x[-1] - x[0], y[-1] - y[0]
    bottom = bottom - closing * sx / perimeter
    right = right - closing * (lx + sy) / perimeter
    top_rev = top_rev - closing * (lx + ly + sx) / perimeter
    left_rev = left_rev - closing * (2 * lx + ly + sy) / perimeter
    return BoundaryField(grid, {"bottom": bottom, "right": right, "top": top_rev[::-1], "left": left_rev[::-1]})


def velocity_from_vorticity(grid_or_domain, omega: ScalarField, normal_trace_data: BoundaryField):
    """Divergence-free ``u`` with ``curl u = omega`` and ``u.n`` prescribed.

    Built from a stream function solving ``-lap psi = omega`` with Dirichlet
    data equal to the running integral of the normal trace.
    """
    grid = getattr(grid_or_domain, "grid", grid_or_domain)
    psi_b = _stream_boundary(grid, normal_trace_data)
    psi = solve_dirichlet_poisson(grid, -omega, psi_b)
    return perp_grad(psi)


def leray_project(domain, v: VectorField) -> VectorField:
    """Remove the gradient part of ``v``.

    The result keeps ``curl v``, has zero normal trace on the uncontrolled
    boundary and keeps ``v.n`` on the controlled part up to a uniform shift
    restoring zero net flux.  It is exactly divergence free for ``div``.
    """
    grid = v.grid
    trace = normal_trace(v)
    controlled = domain.controlled_mask()
    weights = boundary_weights(grid)
    sig_len = sum(float(np.sum(weights[n][controlled[n]])) for n in trace.walls)
    kept = {n: np.where(controlled[n], vals, 0.0) for n, vals in trace.walls.items()}
    if sig_len > 0:
        net = sum(float(np.sum(weights[n] * kept[n])) for n in kept)
        kept = {n: np.where(controlled[n], vals - net / sig_len, 0.0) for n, vals in kept.items()}
    return velocity_from_vorticity(grid, curl2d(v), BoundaryField(grid, kept))


# ---------------------------------------------------------------------------
# serialization


def to_csv(f, path):
    """Write ``x, y, value...`` rows (Cartesian sample coordinates)."""
    p = f.grid.points().reshape(-1, 2)
    vals = f.values.reshape(1, -1) if isinstance(f, ScalarField) else f.values.reshape(2, -1)
    names = ["value"] if isinstance(f, ScalarField) else ["vx", "vy"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", *names])
        for k in range(p.shape[0]):
            w.writerow([repr(float(p[k, 0])), repr(float(p[k, 1]))] + [repr(float(c)) for c in vals[:, k]])


def read_csv(path, grid):
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    if data.ndim == 1:
        data = data[None]
    if data.shape[1] == 3:
        return ScalarField(grid, data[:, 2].reshape(grid.shape))
    return VectorField(grid, data[:, 2:].T.reshape(2, *grid.shape))


def dump_binary(array, path):
    """Raw row-major little-endian float64 dump."""
    np.ascontiguousarray(array, dtype="<f8").tofile(Path(path))


def load_binary(path, shape):
    return np.fromfile(Path(path), dtype="<f8").reshape(shape)
