"""Cubic Lagrange interpolation on uniform tensor grids (semi-Lagrangian feet)."""

import numpy as np

FILL = "fill"
CLAMP = "clamp"
PERIODIC = "periodic"


def cubic_weights(f):
    """Lagrange weights for nodes -1, 0, 1, 2 at fractional offset ``f``."""
    return np.stack(
        [
            -f * (f - 1) * (f - 2) / 6,
            (f + 1) * (f - 1) * (f - 2) / 2,
            -(f + 1) * f * (f - 2) / 2,
            (f + 1) * f * (f - 1) / 6,
        ]
    )


def _stencil(p, origin, h, n, mode):
    s = (p - origin) / h
    i = np.floor(s).astype(int)
    f = s - i
    idx = i[None] + np.arange(-1, 3).reshape((4,) + (1,) * i.ndim)
    w = cubic_weights(f)
    if mode == PERIODIC:
        return np.mod(idx, n), w, np.ones(idx.shape, dtype=bool)
    inside = (idx >= 0) & (idx < n)
    return np.clip(idx, 0, n - 1), w, inside if mode == FILL else np.ones(idx.shape, dtype=bool)


def interp1(values, origin, h, p, fill=0.0, mode=FILL):
    """Interpolate along axis 0 of ``values`` (extra trailing axes allowed)."""
    n = values.shape[0]
    idx, w, inside = _stencil(np.asarray(p, dtype=float), origin, h, n, mode)
    picked = values[idx]
    extra = (1,) * (values.ndim - 1)
    w = w.reshape(w.shape + extra)
    inside = inside.reshape(inside.shape + extra)
    out = np.sum(w * np.where(inside, picked, fill), axis=0)
    return out


def _axis_index(p, origin, h, n, mode):
    """Stencil indices into an array padded by two ``fill`` cells per side."""
    s = (p - origin) / h
    i = np.floor(s).astype(int)
    idx = i[None] + np.arange(-1, 3).reshape((4,) + (1,) * i.ndim)
    w = cubic_weights(s - i)
    if mode == PERIODIC:
        return np.mod(idx, n) + 2, w
    if mode == CLAMP:
        return np.clip(idx, 0, n - 1) + 2, w
    return np.clip(idx + 2, 0, n + 3), w


def interp2(values, x0, hx, y0, hy, px, py, fill=0.0, mode_x=FILL, mode_y=CLAMP, limit=False):
    """Bicubic Lagrange interpolation of ``values[i, j]`` at points ``(px, py)``.

    Stencil nodes outside the grid take ``fill`` (``mode=fill``), the edge
    value (``clamp``) or wrap (``periodic``).  ``limit`` clips the result to
    the range of the four surrounding nodes, which makes the scheme free of
    new extrema.
    """
    n0, n1 = values.shape
    padded = np.pad(np.asarray(values, dtype=float), 2, constant_values=fill)
    m1 = n1 + 4
    flat = padded.ravel()
    ix, wx = _axis_index(np.asarray(px, dtype=float), x0, hx, n0, mode_x)
    iy, wy = _axis_index(np.asarray(py, dtype=float), y0, hy, n1, mode_y)
    out = np.zeros(np.shape(px))
    for a in range(4):
        row = ix[a] * m1
        acc = wy[0] * flat[row + iy[0]]
        for b in range(1, 4):
            acc += wy[b] * flat[row + iy[b]]
        out += wx[a] * acc
    if limit:
        corners = [flat[ix[a] * m1 + iy[b]] for a in (1, 2) for b in (1, 2)]
        out = np.clip(out, np.minimum.reduce(corners), np.maximum.reduce(corners))
    return out


def interp_polar(values, dr, dth, pr, pth, fill=0.0, limit=False):
    """Bicubic interpolation on a cell-centred polar grid.

    Radial stencil indices below zero are reflected through the origin
    (``theta + pi``); indices past the outer ring take ``fill``.
    """
    nr, nth = values.shape
    if nth % 2:
        raise ValueError("polar interpolation needs an even number of angles")
    s = np.asarray(pr, dtype=float) / dr - 0.5
    i = np.floor(s).astype(int)
    f = s - i
    wr = cubic_weights(f)
    t = np.asarray(pth, dtype=float) / dth
    j = np.floor(t).astype(int)
    g = t - j
    wt = cubic_weights(g)
    out = np.zeros(np.shape(pr))
    lo = np.full(out.shape, np.inf)
    hi = np.full(out.shape, -np.inf)
    for a in range(4):
        ia = i + a - 1
        flip = ia < 0
        ir = np.where(flip, -1 - ia, ia)
        outside = ir >= nr
        irc = np.clip(ir, 0, nr - 1)
        for b in range(4):
            jb = j + b - 1 + np.where(flip, nth // 2, 0)
            v = np.where(outside, fill, values[irc, np.mod(jb, nth)])
            out += wr[a] * wt[b] * v
            if limit and a in (1, 2) and b in (1, 2):
                lo = np.minimum(lo, v)
                hi = np.maximum(hi, v)
    if limit:
        out = np.clip(out, lo, hi)
    return out
