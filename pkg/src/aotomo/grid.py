"""Uniform node-centred grids, fields and the discrete operators shared by all solvers.

Arrays are stored with shape ``(ny, nx)``: row ``j`` holds the nodes with
``y = y0 + j*hy`` and column ``i`` the nodes with ``x = x0 + i*hx``.  Flattening
in C order therefore gives row-major storage, one grid row of constant ``y``
after the other.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular node grid covering ``[x0, x0+lx] x [y0, y0+ly]``."""

    nx: int
    ny: int
    lx: float = 1.6
    ly: float = 1.0
    x0: float = 0.0
    y0: float = 0.0

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ValueError(f"grid needs at least 3 nodes per axis, got nx={self.nx}, ny={self.ny}")
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError(f"grid side lengths must be positive, got lx={self.lx}, ly={self.ly}")

    @property
    def hx(self) -> float:
        return self.lx / (self.nx - 1)

    @property
    def hy(self) -> float:
        return self.ly / (self.ny - 1)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.hx * np.arange(self.nx)

    @property
    def y(self) -> np.ndarray:
        return self.y0 + self.hy * np.arange(self.ny)

    def coords(self) -> Tuple[np.ndarray, np.ndarray]:
        """Node coordinates ``(X, Y)``, each of shape ``(ny, nx)``."""
        return np.meshgrid(self.x, self.y, indexing="xy")

    def trapezoid_weights(self) -> np.ndarray:
        """Tensor-product trapezoidal quadrature weights (cell area, halved on edges)."""
        wx = np.full(self.nx, self.hx)
        wx[[0, -1]] *= 0.5
        wy = np.full(self.ny, self.hy)
        wy[[0, -1]] *= 0.5
        return np.outer(wy, wx)

    def boundary_weights(self) -> np.ndarray:
        """Trapezoidal arc-length weights of the boundary nodes (zero in the interior)."""
        w = np.zeros(self.shape)
        w[0, :] += self.hx
        w[-1, :] += self.hx
        w[:, 0] += self.hy
        w[:, -1] += self.hy
        w[0, [0, -1]] -= 0.5 * self.hx
        w[-1, [0, -1]] -= 0.5 * self.hx
        w[[0, -1], 0] -= 0.5 * self.hy
        w[[0, -1], -1] -= 0.5 * self.hy
        return w

    def boundary_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[0, :] = m[-1, :] = m[:, 0] = m[:, -1] = True
        return m

    def contains(self, px, py) -> np.ndarray:
        px = np.asarray(px)
        py = np.asarray(py)
        return (
            (px >= self.x0) & (px <= self.x0 + self.lx) & (py >= self.y0) & (py <= self.y0 + self.ly)
        )

    def field(self, values) -> "ScalarField":
        return ScalarField(self, values)

    def zeros(self) -> "ScalarField":
        return ScalarField(self, np.zeros(self.shape))

    def full(self, value: float) -> "ScalarField":
        return ScalarField(self, np.full(self.shape, float(value)))

    def sample(self, func) -> "ScalarField":
        """Evaluate ``func(X, Y)`` on every node."""
        X, Y = self.coords()
        return ScalarField(self, np.broadcast_to(func(X, Y), self.shape).astype(float))

    def refined(self, factor: int = 2) -> "Grid":
        """Grid with ``factor`` times as many cells per axis over the same rectangle."""
        return Grid(
            (self.nx - 1) * factor + 1, (self.ny - 1) * factor + 1, self.lx, self.ly, self.x0, self.y0
        )


def _checked(grid: Grid, values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.shape != grid.shape:
        if arr.size == grid.size:
            arr = arr.reshape(grid.shape)
        else:
            raise ValueError(f"field of shape {arr.shape} does not fit grid {grid.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("field values must be finite")
    return arr


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray

    # make numpy defer to the reflected operators below
    __array_ufunc__ = None

    def __post_init__(self):
        arr = _checked(self.grid, self.values)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def with_values(self, values) -> "ScalarField":
        return ScalarField(self.grid, values)

    def __add__(self, other):
        return self.with_values(self.values + _raw(other))

    def __sub__(self, other):
        return self.with_values(self.values - _raw(other))

    def __mul__(self, other):
        return self.with_values(self.values * _raw(other))

    def __rsub__(self, other):
        return self.with_values(_raw(other) - self.values)

    def __truediv__(self, other):
        return self.with_values(self.values / _raw(other))

    __radd__ = __add__
    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())


@dataclass(frozen=True, eq=False)
class VectorField:
    """Two-component field on a grid.

    With ``layout="node"`` both components live on the nodes.  With
    ``layout="edge"`` the field is staggered: ``ux[j, i]`` is the value on the
    horizontal edge joining nodes ``(i, j)`` and ``(i+1, j)`` and ``uy[j, i]``
    the value on the vertical edge joining ``(i, j)`` and ``(i, j+1)``; the
    last column of ``ux`` and last row of ``uy`` are unused and kept at zero.
    """

    grid: Grid
    ux: np.ndarray
    uy: np.ndarray
    layout: str = "node"

    def __post_init__(self):
        if self.layout not in ("node", "edge"):
            raise ValueError(f"unknown vector layout {self.layout!r}")
        ux = _checked(self.grid, self.ux)
        uy = _checked(self.grid, self.uy)
        ux.setflags(write=False)
        uy.setflags(write=False)
        object.__setattr__(self, "ux", ux)
        object.__setattr__(self, "uy", uy)

    def norm(self) -> np.ndarray:
        return np.hypot(self.ux, self.uy)


def _raw(obj):
    return obj.values if isinstance(obj, ScalarField) else obj


@dataclass(frozen=True, eq=False)
class SubdomainMask:
    """Boolean node mask of a disc or polygon inside the grid."""

    grid: Grid
    inside: np.ndarray
    description: dict = field(default_factory=dict)

    def __post_init__(self):
        inside = np.asarray(self.inside, dtype=bool)
        if inside.shape != self.grid.shape:
            raise ValueError("mask shape does not match grid")
        inside.setflags(write=False)
        object.__setattr__(self, "inside", inside)

    @classmethod
    def disc(cls, grid: Grid, center: Sequence[float], radius: float) -> "SubdomainMask":
        X, Y = grid.coords()
        inside = (X - center[0]) ** 2 + (Y - center[1]) ** 2 < radius**2
        mask = cls(grid, inside, {"shape": "disc", "center": tuple(map(float, center)), "radius": float(radius)})
        mask._require_interior()
        return mask

    @classmethod
    def polygon(cls, grid: Grid, vertices) -> "SubdomainMask":
        X, Y = grid.coords()
        inside = points_in_polygon(X, Y, vertices)
        mask = cls(grid, inside, {"shape": "polygon", "vertices": [tuple(map(float, v)) for v in vertices]})
        mask._require_interior()
        return mask

    def _require_interior(self):
        if np.any(self.inside & self.grid.boundary_mask()):
            raise ValueError("subdomain mask touches the outer boundary")

    def boundary(self) -> np.ndarray:
        """Mask nodes with at least one 4-neighbour outside the mask."""
        m = self.inside
        outside = np.pad(~m, 1, constant_values=True)
        touch = outside[:-2, 1:-1] | outside[2:, 1:-1] | outside[1:-1, :-2] | outside[1:-1, 2:]
        return m & touch

    def interior(self) -> np.ndarray:
        return self.inside & ~self.boundary()

    def shrunk(self, width: float) -> np.ndarray:
        """Mask nodes whose distance to the complement exceeds ``width`` (discs only)."""
        d = self.description
        if d.get("shape") != "disc":
            raise ValueError("shrinking is only defined for disc masks")
        X, Y = self.grid.coords()
        c, r = d["center"], d["radius"]
        return (X - c[0]) ** 2 + (Y - c[1]) ** 2 < (r - width) ** 2

    def contains(self, px, py) -> np.ndarray:
        d = self.description
        if d.get("shape") == "disc":
            c, r = d["center"], d["radius"]
            return (np.asarray(px) - c[0]) ** 2 + (np.asarray(py) - c[1]) ** 2 < r**2
        if d.get("shape") == "polygon":
            return points_in_polygon(px, py, d["vertices"])
        raise ValueError("mask has no geometric description")

    def distance_to_boundary(self, px, py) -> np.ndarray:
        """Signed distance to the mask outline, positive inside (discs only)."""
        d = self.description
        if d.get("shape") != "disc":
            raise ValueError("distance is only defined for disc masks")
        c, r = d["center"], d["radius"]
        return r - np.hypot(np.asarray(px) - c[0], np.asarray(py) - c[1])


def points_in_polygon(px, py, vertices) -> np.ndarray:
    """Even-odd rule point-in-polygon test, vectorised over the query points."""
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    verts = np.asarray(vertices, dtype=float)
    inside = np.zeros(np.broadcast(px, py).shape, dtype=bool)
    n = len(verts)
    for k in range(n):
        xa, ya = verts[k]
        xb, yb = verts[(k + 1) % n]
        if ya == yb:
            continue
        crosses = (ya > py) != (yb > py)
        xint = xa + (py - ya) * (xb - xa) / (yb - ya)
        inside ^= crosses & (px < xint)
    return inside


def gradient(f: ScalarField) -> VectorField:
    """Nodal gradient: central differences inside, second-order one-sided on the boundary."""
    g = f.grid
    dy, dx = np.gradient(f.values, g.hy, g.hx, edge_order=2)
    return VectorField(g, dx, dy)


def divergence(F: VectorField) -> ScalarField:
    """Nodal divergence: central differences inside, first-order one-sided on the boundary.

    The boundary closure makes ``divergence`` the exact negative adjoint of
    :func:`gradient` for fields vanishing on a two-node collar.
    """
    if F.layout != "node":
        return edge_divergence(F)
    g = F.grid
    dux = np.gradient(F.ux, g.hx, axis=1, edge_order=1)
    duy = np.gradient(F.uy, g.hy, axis=0, edge_order=1)
    return ScalarField(g, dux + duy)


def edge_gradient(f: ScalarField) -> VectorField:
    """Forward differences along the grid edges (staggered layout)."""
    g = f.grid
    ux = np.zeros(g.shape)
    uy = np.zeros(g.shape)
    ux[:, :-1] = np.diff(f.values, axis=1) / g.hx
    uy[:-1, :] = np.diff(f.values, axis=0) / g.hy
    return VectorField(g, ux, uy, layout="edge")


def edge_divergence(F: VectorField) -> ScalarField:
    """Backward-difference divergence of an edge field; ``edge_divergence(edge_gradient(f))`` is the 5-point Laplacian inside."""
    g = F.grid
    ux = np.array(F.ux)
    uy = np.array(F.uy)
    ux[:, -1] = 0.0
    uy[-1, :] = 0.0
    div = ux / g.hx + uy / g.hy
    div[:, 1:] -= ux[:, :-1] / g.hx
    div[1:, :] -= uy[:-1, :] / g.hy
    return ScalarField(g, div)


def laplacian(f: ScalarField) -> ScalarField:
    """5-point Laplacian on interior nodes, zero on the boundary rows."""
    g = f.grid
    v = f.values
    out = np.zeros(g.shape)
    out[1:-1, 1:-1] = (v[1:-1, 2:] - 2 * v[1:-1, 1:-1] + v[1:-1, :-2]) / g.hx**2 + (
        v[2:, 1:-1] - 2 * v[1:-1, 1:-1] + v[:-2, 1:-1]
    ) / g.hy**2
    return ScalarField(g, out)


def face_harmonic_mean(values: np.ndarray):
    """Harmonic means of neighbouring node values on horizontal and vertical edges.

    Returned arrays have the grid shape; the last column (resp. row) is unused and zero.
    """
    v = np.asarray(values, dtype=float)
    fx = np.zeros_like(v)
    fy = np.zeros_like(v)
    fx[:, :-1] = 2 * v[:, 1:] * v[:, :-1] / (v[:, 1:] + v[:, :-1])
    fy[:-1, :] = 2 * v[1:, :] * v[:-1, :] / (v[1:, :] + v[:-1, :])
    return fx, fy


def integrate(f: ScalarField, mask: Optional[SubdomainMask] = None) -> float:
    """Trapezoidal quadrature over the grid or over the nodes of ``mask``."""
    w = f.grid.trapezoid_weights()
    if mask is not None:
        w = np.where(_mask_array(mask), w, 0.0)
    return float(np.sum(w * f.values))


def inner(u, v, grid: Grid, mask=None) -> float:
    """Trapezoid-weighted inner product of two arrays (or fields) on ``grid``."""
    w = grid.trapezoid_weights()
    if mask is not None:
        w = np.where(_mask_array(mask), w, 0.0)
    return float(np.sum(w * _raw(u) * _raw(v)))


def l2_norm(u, grid: Grid, mask=None) -> float:
    return float(np.sqrt(max(inner(u, u, grid, mask), 0.0)))


def vector_inner(F: VectorField, G: VectorField, mask=None) -> float:
    return inner(F.ux, G.ux, F.grid, mask) + inner(F.uy, G.uy, F.grid, mask)


def h1_norm(u: ScalarField, mask=None) -> float:
    """Discrete H1 norm built from :func:`gradient` and trapezoid weights."""
    du = gradient(u)
    sq = inner(u, u, u.grid, mask) + vector_inner(du, du, mask)
    return float(np.sqrt(sq))


def _mask_array(mask) -> np.ndarray:
    return mask.inside if isinstance(mask, SubdomainMask) else np.asarray(mask, dtype=bool)


def bilinear_sample(values: np.ndarray, grid: Grid, px, py, fill: float = 0.0, clamp: bool = False) -> np.ndarray:
    """Bilinear interpolation of nodal ``values`` at points.

    Points outside the grid get ``fill``, or with ``clamp=True`` the value
    at the nearest point of the grid rectangle.
    """
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    fx = (px - grid.x0) / grid.hx
    fy = (py - grid.y0) / grid.hy
    if clamp:
        fx = np.clip(fx, 0, grid.nx - 1)
        fy = np.clip(fy, 0, grid.ny - 1)
    inside = (fx >= 0) & (fx <= grid.nx - 1) & (fy >= 0) & (fy <= grid.ny - 1)
    i0 = np.clip(np.floor(fx).astype(np.int64), 0, grid.nx - 2)
    j0 = np.clip(np.floor(fy).astype(np.int64), 0, grid.ny - 2)
    tx = np.clip(fx - i0, 0.0, 1.0)
    ty = np.clip(fy - j0, 0.0, 1.0)
    v = values
    out = (
        v[j0, i0] * (1 - tx) * (1 - ty)
        + v[j0, i0 + 1] * tx * (1 - ty)
        + v[j0 + 1, i0] * (1 - tx) * ty
        + v[j0 + 1, i0 + 1] * tx * ty
    )
    return np.where(inside, out, fill)
