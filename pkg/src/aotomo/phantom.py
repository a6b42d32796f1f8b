"""Admissible piecewise-constant absorption maps.

A phantom is a background value ``a0`` plus a list of inclusions (discs,
polygons or a grayscale image) that must stay inside the disc ``D``.
Later inclusions override earlier ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import List, Optional, Tuple

import numpy as np

from .errors import AdmissibilityError
from .grid import Grid, ScalarField, SubdomainMask, bilinear_sample, points_in_polygon


@dataclass(frozen=True)
class Inclusion:
    shape: str  # "disc" | "polygon" | "image"
    value: float = 0.0
    center: Tuple[float, float] = (0.0, 0.0)
    radius: float = 0.0
    vertices: Tuple[Tuple[float, float], ...] = ()
    path: str = ""
    value_min: float = 0.0
    value_max: float = 0.0
    # image placement (x_min, y_min, x_max, y_max); None means the whole grid
    extent: Optional[Tuple[float, float, float, float]] = None

    @classmethod
    def disc(cls, center, radius, value):
        return cls("disc", value=float(value), center=(float(center[0]), float(center[1])), radius=float(radius))

    @classmethod
    def polygon(cls, vertices, value):
        return cls("polygon", value=float(value), vertices=tuple((float(x), float(y)) for x, y in vertices))

    @classmethod
    def image(cls, path, value_min, value_max, extent=None):
        return cls("image", path=str(path), value_min=float(value_min), value_max=float(value_max),
                   extent=None if extent is None else tuple(map(float, extent)))


@dataclass(frozen=True)
class AbsorptionSpec:
    a0: float = 1.0
    a_lower: float = 1.0
    a_upper: float = 1.98
    support_center: Tuple[float, float] = (0.8, 0.5)
    support_radius: float = 0.48
    inclusions: Tuple[Inclusion, ...] = ()
    margin: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "inclusions", tuple(self.inclusions))
        validate_spec(self)

    def support_mask(self, grid: Grid) -> SubdomainMask:
        return SubdomainMask.disc(grid, self.support_center, self.support_radius)


def validate_spec(spec: AbsorptionSpec) -> None:
    if not spec.a_lower > 0:
        raise AdmissibilityError(f"a_lower must be positive, got {spec.a_lower}")
    if not spec.a_lower <= spec.a_upper:
        raise AdmissibilityError(f"a_lower ({spec.a_lower}) exceeds a_upper ({spec.a_upper})")
    if not spec.a_lower <= spec.a0 <= spec.a_upper:
        raise AdmissibilityError(f"a0={spec.a0} outside [a_lower, a_upper]=[{spec.a_lower}, {spec.a_upper}]")
    if not spec.support_radius > 0:
        raise AdmissibilityError("support_radius must be positive")
    cx, cy = spec.support_center
    room = spec.support_radius - spec.margin
    for k, inc in enumerate(spec.inclusions):
        if inc.shape == "disc":
            values = [inc.value]
            reach = math.hypot(inc.center[0] - cx, inc.center[1] - cy) + inc.radius
            if not inc.radius > 0:
                raise AdmissibilityError(f"inclusion {k}: disc radius must be positive")
            if not reach < room:
                raise AdmissibilityError(
                    f"inclusion {k}: disc escapes the support D (reaches {reach:.4f}, allowed < {room:.4f})"
                )
        elif inc.shape == "polygon":
            values = [inc.value]
            if len(inc.vertices) < 3:
                raise AdmissibilityError(f"inclusion {k}: polygon needs at least 3 vertices")
            reach = max(math.hypot(x - cx, y - cy) for x, y in inc.vertices)
            if not reach < room:
                raise AdmissibilityError(
                    f"inclusion {k}: polygon escapes the support D (reaches {reach:.4f}, allowed < {room:.4f})"
                )
        elif inc.shape == "image":
            values = [inc.value_min, inc.value_max]
        else:
            raise AdmissibilityError(f"inclusion {k}: unknown shape {inc.shape!r}")
        for v in values:
            if not spec.a_lower <= v <= spec.a_upper:
                raise AdmissibilityError(
                    f"inclusion {k}: value {v} outside [a_lower, a_upper]=[{spec.a_lower}, {spec.a_upper}]"
                )


@dataclass(frozen=True, eq=False)
class AbsorptionField:
    field: ScalarField
    spec: AbsorptionSpec
    jump_set: Optional[List[np.ndarray]] = dc_field(default=None)

    @property
    def grid(self) -> Grid:
        return self.field.grid

    @property
    def values(self) -> np.ndarray:
        return self.field.values


def rasterize(spec: AbsorptionSpec, grid: Grid) -> AbsorptionField:
    """Evaluate the phantom on every node."""
    validate_spec(spec)
    X, Y = grid.coords()
    a = np.full(grid.shape, spec.a0)
    support = spec.support_mask(grid)
    curves = []
    for inc in spec.inclusions:
        if inc.shape == "disc":
            inside = (X - inc.center[0]) ** 2 + (Y - inc.center[1]) ** 2 < inc.radius**2
            a[inside] = inc.value
            t = np.linspace(0.0, 2 * np.pi, 721)
            curves.append(np.column_stack([inc.center[0] + inc.radius * np.cos(t), inc.center[1] + inc.radius * np.sin(t)]))
        elif inc.shape == "polygon":
            inside = points_in_polygon(X, Y, inc.vertices)
            a[inside] = inc.value
            v = np.asarray(inc.vertices)
            curves.append(np.vstack([v, v[:1]]))
        else:
            img = _image_values(inc, grid, X, Y)
            inside = support.inside & ~np.isnan(img)
            a[inside] = img[inside]
    # the support constraint is exact on the grid
    a[~support.inside] = spec.a0
    np.clip(a, spec.a_lower, spec.a_upper, out=a)
    return AbsorptionField(ScalarField(grid, a), spec, curves)


def _image_values(inc: Inclusion, grid: Grid, X, Y) -> np.ndarray:
    from .io import read_pgm

    img = read_pgm(inc.path).astype(float) / 255.0
    rows, cols = img.shape
    x_min, y_min, x_max, y_max = inc.extent or (grid.x0, grid.y0, grid.x0 + grid.lx, grid.y0 + grid.ly)
    # pixel centres; row 0 is the top of the picture
    u = (X - x_min) / (x_max - x_min) * cols - 0.5
    w = (y_max - Y) / (y_max - y_min) * rows - 0.5
    img_grid = Grid(cols, rows, cols - 1.0, rows - 1.0)
    vals = bilinear_sample(img, img_grid, np.clip(u, 0, cols - 1), np.clip(w, 0, rows - 1))
    out = inc.value_min + (inc.value_max - inc.value_min) * vals
    outside = (X < x_min) | (X > x_max) | (Y < y_min) | (Y > y_max)
    return np.where(outside, np.nan, out)


def total_variation_estimate(a) -> float:
    """Total variation of a nodal field as a sum of ``|jump| * line spacing`` over grid edges.

    Differences are taken along the two axes and the two diagonals and
    combined with the Crofton weight ``pi / 8``, so that a staircased
    boundary is measured by its true length rather than by its Manhattan
    length.  The residual anisotropy is below 5 percent for any boundary
    direction and vanishes on average over directions.
    """
    f = a.field if isinstance(a, AbsorptionField) else a
    g = f.grid
    v = f.values
    diag_spacing = g.hx * g.hy / math.hypot(g.hx, g.hy)
    tv = np.abs(np.diff(v, axis=1)).sum() * g.hy + np.abs(np.diff(v, axis=0)).sum() * g.hx
    tv += (np.abs(v[1:, 1:] - v[:-1, :-1]).sum() + np.abs(v[1:, :-1] - v[:-1, 1:]).sum()) * diag_spacing
    return float(np.pi / 8 * tv)


def disc_phantom(contrast: float = 0.5, radius: float = 0.15, center=(0.8, 0.5), a0: float = 1.0,
                 a_upper: Optional[float] = None, **kw) -> AbsorptionSpec:
    value = a0 + contrast
    upper = a_upper if a_upper is not None else max(value, a0)
    lower = min(value, a0)
    return AbsorptionSpec(a0=a0, a_lower=kw.pop("a_lower", lower), a_upper=upper,
                          inclusions=(Inclusion.disc(center, radius, value),), **kw)


def _bar(p, q, width):
    (x1, y1), (x2, y2) = p, q
    dx, dy = x2 - x1, y2 - y1
    n = math.hypot(dx, dy)
    ox, oy = -dy / n * width / 2, dx / n * width / 2
    return ((x1 + ox, y1 + oy), (x2 + ox, y2 + oy), (x2 - ox, y2 - oy), (x1 - ox, y1 - oy))


def vessel_phantom(reach: float = 0.44) -> AbsorptionSpec:
    """Branching bar-and-blob network with contrast up to 1.98, in the spirit of the membrane picture.

    ``reach`` bounds the distance of every vertex from the centre of D;
    the default lets vessels run into the 0.1-wide collar of D.
    """
    cx, cy = 0.8, 0.5
    segments = [
        # trunk and branches, (start, end, width, value)
        ((-0.40, -0.12), (0.40, 0.10), 0.050, 1.98),
        ((-0.05, -0.02), (0.10, 0.38), 0.035, 1.75),
        ((0.05, 0.02), (0.22, -0.35), 0.035, 1.6),
        ((-0.22, -0.06), (-0.30, 0.28), 0.030, 1.5),
        ((-0.15, -0.08), (-0.10, -0.40), 0.025, 1.85),
        ((0.18, 0.06), (0.38, 0.16), 0.025, 1.4),
    ]
    incs = []
    for (p, q, wdt, val) in segments:
        verts = _bar((cx + p[0], cy + p[1]), (cx + q[0], cy + q[1]), wdt)
        verts = tuple(_pull_inside(v, (cx, cy), reach) for v in verts)
        incs.append(Inclusion.polygon(verts, val))
    incs.append(Inclusion.disc((cx - 0.02, cy + 0.16), 0.05, 1.9))
    incs.append(Inclusion.disc((cx + 0.2, cy - 0.12), 0.04, 1.7))
    return AbsorptionSpec(a0=1.0, a_lower=1.0, a_upper=1.98, inclusions=tuple(incs))


def _pull_inside(v, c, reach):
    dx, dy = v[0] - c[0], v[1] - c[1]
    d = math.hypot(dx, dy)
    if d <= reach:
        return v
    return (c[0] + dx * reach / d, c[1] + dy * reach / d)
