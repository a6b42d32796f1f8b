"""Spherical acoustic displacements, displaced absorptions and the measurement maps.

A displacement centred at ``y`` with radius ``r`` and front width ``eta``
pushes each point radially by ``(eta/r) * w((|x-y| - r)/eta)``.  The
measurement for that displacement is the normalised volume correlation
``eta**-2 * int (a_v - a) phi phi_v``, where ``a_v`` is the absorption
transported by the displacement and ``phi_v`` the fluence it produces.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid, quad
from scipy.optimize import brentq

from .errors import AdmissibilityError, GridMismatchError
from .fluence import BoundaryData, FluenceFactor
from .grid import Grid, ScalarField, VectorField, bilinear_sample, face_harmonic_mean

log = logging.getLogger(__name__)


def bump(t):
    """``exp(1/(t^2 - 1))`` on ``]-1, 1[`` and zero elsewhere."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    m = np.abs(t) < 1
    out[m] = np.exp(1.0 / (t[m] ** 2 - 1.0))
    return out


def bump_derivative(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    m = np.abs(t) < 1
    tm = t[m]
    out[m] = np.exp(1.0 / (tm**2 - 1.0)) * (-2.0 * tm / (tm**2 - 1.0) ** 2)
    return out


class WaveShape:
    """Acoustic wave profile ``c_w * bump(t)``.

    With ``normalize=True`` (default) ``c_w`` makes the profile integrate to
    one; otherwise ``c_w = 1`` and the profile has mass about 0.444.

    Attributes
    ----------
    c_w : float
        Scale factor applied to the bump.
    mass : float
        Integral of the scaled profile.
    min_derivative : float
        Minimum of the derivative over a dense tabulation.  The radial map
        ``rho -> rho + (eta/r) w((rho - r)/eta)`` is monotone exactly when
        ``r >= -min_derivative``.
    """

    def __init__(self, normalize: bool = True, n_table: int = 20001):
        raw_mass = quad(lambda s: float(bump(s)), -1.0, 1.0, epsabs=1e-14, epsrel=1e-13)[0]
        self.normalize = normalize
        self.c_w = 1.0 / raw_mass if normalize else 1.0
        self.mass = self.c_w * raw_mass
        self.t_table = np.linspace(-1.0, 1.0, n_table)
        self.w_table = self(self.t_table)
        self.dw_table = self.derivative(self.t_table)
        self.min_derivative = float(self.dw_table.min())
        # the minimum sits near t = 0.76 where the derivative is smooth
        if self.min_derivative <= -1.0:
            log.info("wave shape has min w' = %.4f <= -1: the radial map folds for r < %.4f",
                     self.min_derivative, -self.min_derivative)

    def __call__(self, t):
        return self.c_w * bump(t)

    def derivative(self, t):
        return self.c_w * bump_derivative(t)

    def kernel(self, s, eta: float):
        """Mollifier ``w_eta(s) = w(s/eta) / eta``."""
        return self(np.asarray(s) / eta) / eta

    @property
    def satisfies_slope_bound(self) -> bool:
        return self.min_derivative > -1.0

    def monotone_pieces(self, r: float, eta: float = 1.0) -> np.ndarray:
        """Breakpoints ``t_0 = -1 < ... < t_k = 1`` between which ``t + w(t)/r`` is monotone."""
        dF = 1.0 + self.dw_table / r
        sign_change = np.nonzero(np.sign(dF[1:]) * np.sign(dF[:-1]) < 0)[0]
        roots = [
            brentq(lambda t: 1.0 + float(self.derivative(t)) / r, self.t_table[k], self.t_table[k + 1], xtol=1e-15)
            for k in sign_change
        ]
        return np.array([-1.0] + roots + [1.0])


def circle_centers(n: int, center=(0.8, 0.5), radius: float = 0.48) -> np.ndarray:
    """``n`` equally spaced points on a circle, counter-clockwise from angle 0."""
    th = 2 * np.pi * np.arange(n) / n
    return np.column_stack([center[0] + radius * np.cos(th), center[1] + radius * np.sin(th)])


@dataclass(eq=False)
class AcousticConfig:
    """Acoustic sweep geometry.

    ``fold_policy`` decides what happens when the radial map folds, which
    for the normalised bump is every radius below 1.8: ``"degree"`` sums the
    preimages with the orientation sign, ``"reject"`` raises.
    """

    eta: float
    centers: np.ndarray
    radii: np.ndarray
    wave: WaveShape = field(default_factory=WaveShape)
    fold_policy: str = "degree"
    n_threads: int = 1

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        self.radii = np.atleast_1d(np.asarray(self.radii, dtype=float))
        if not self.eta > 0:
            raise AdmissibilityError(f"eta must be positive, got {self.eta}")
        if self.centers.shape[1] != 2:
            raise AdmissibilityError("centers must be an (n, 2) array")
        if np.any(np.diff(self.radii) <= 0):
            raise AdmissibilityError("radii must be strictly increasing")
        if self.radii.size and not self.radii[0] > self.eta:
            raise AdmissibilityError(f"smallest radius {self.radii[0]} must exceed eta={self.eta}")
        if self.fold_policy not in ("degree", "reject"):
            raise AdmissibilityError(f"unknown fold policy {self.fold_policy!r}")

    @property
    def r_min(self) -> float:
        """Smallest radius with a monotone radial map."""
        return max(-self.wave.min_derivative, 0.0)

    @classmethod
    def on_circle(cls, eta: float, n_centers: int = 128, n_radii: int = 96, r_max: Optional[float] = None,
                  center=(0.8, 0.5), radius: float = 0.48, r_start: Optional[float] = None, **kw):
        """Centres on a circle and radii covering the disc it encloses."""
        r_max = 2 * radius + eta if r_max is None else r_max
        r_start = 1.01 * eta if r_start is None else r_start
        return cls(eta, circle_centers(n_centers, center, radius), np.linspace(r_start, r_max, n_radii), **kw)


@dataclass(eq=False)
class Sinogram:
    """Values on (centre, radius) pairs, centre-major."""

    centers: np.ndarray
    radii: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        self.radii = np.asarray(self.radii, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.centers), len(self.radii)):
            raise GridMismatchError(
                f"sinogram values {self.values.shape} do not match {len(self.centers)} centres x {len(self.radii)} radii"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("sinogram values must be finite")

    @property
    def shape(self):
        return self.values.shape

    def with_values(self, values) -> "Sinogram":
        return Sinogram(self.centers, self.radii, values)

    def norm(self) -> float:
        """Discrete L2 norm over centres (arc length) and radii (trapezoid)."""
        return float(np.sqrt(max(sigma_inner(self, self), 0.0)))


def _sigma_weights(s: Sinogram) -> np.ndarray:
    c = s.centers
    if len(c) > 1:
        nxt = np.roll(c, -1, axis=0)
        prv = np.roll(c, 1, axis=0)
        arc = 0.5 * (np.linalg.norm(nxt - c, axis=1) + np.linalg.norm(c - prv, axis=1))
    else:
        arc = np.ones(1)
    wr = np.ones(1)
    if len(s.radii) > 1:
        d = np.diff(s.radii)
        wr = np.zeros(len(s.radii))
        wr[:-1] += 0.5 * d
        wr[1:] += 0.5 * d
    return np.outer(arc, wr)


def sigma_inner(s: Sinogram, t: Sinogram) -> float:
    return float(np.sum(_sigma_weights(s) * s.values * t.values))


def _rho_xi(grid: Grid, y):
    X, Y = grid.coords()
    dx, dy = X - y[0], Y - y[1]
    rho = np.hypot(dx, dy)
    with np.errstate(invalid="ignore", divide="ignore"):
        xi_x = np.where(rho > 0, dx / np.where(rho > 0, rho, 1), 0.0)
        xi_y = np.where(rho > 0, dy / np.where(rho > 0, rho, 1), 0.0)
    return rho, xi_x, xi_y


def displacement(cfg: AcousticConfig, grid: Grid, y, r: float) -> VectorField:
    """Nodal displacement field ``(eta/r) w((|x-y| - r)/eta) (x-y)/|x-y|`` (zero at ``y`` itself)."""
    if not r > cfg.eta:
        raise AdmissibilityError(f"radius {r} must exceed eta={cfg.eta}")
    rho, xi_x, xi_y = _rho_xi(grid, y)
    mag = cfg.eta / r * cfg.wave((rho - r) / cfg.eta)
    return VectorField(grid, mag * xi_x, mag * xi_y)


def _preimages(wave: WaveShape, r: float, s: np.ndarray, pieces: np.ndarray, tol: float = 1e-12):
    """Solve ``t + w(t)/r = s`` on each monotone piece; yield ``(mask, t, sign)``."""
    F = lambda t: t + wave(t) / r  # noqa: E731
    for t_lo, t_hi in zip(pieces[:-1], pieces[1:]):
        f_lo, f_hi = float(F(t_lo)), float(F(t_hi))
        sign = 1.0 if f_hi > f_lo else -1.0
        lo_v, hi_v = min(f_lo, f_hi), max(f_lo, f_hi)
        # half-open ranges so a shared breakpoint is counted once per piece
        hit = (s >= lo_v) & (s < hi_v) if sign > 0 else (s > lo_v) & (s <= hi_v)
        if not np.any(hit):
            continue
        target = s[hit]
        a = np.full(target.shape, t_lo)
        b = np.full(target.shape, t_hi)
        n_steps = int(np.ceil(np.log2(max(t_hi - t_lo, tol) / tol))) + 1
        for _ in range(n_steps):
            mid = 0.5 * (a + b)
            below = (F(mid) - target) * sign < 0
            a = np.where(below, mid, a)
            b = np.where(below, b, mid)
        yield hit, 0.5 * (a + b), sign


def displace_absorption(a, cfg: AcousticConfig, y, r: float) -> ScalarField:
    """Absorption transported by the displacement: ``a_v = a o (Id + v)^-1``.

    Each node at distance ``rho`` from ``y`` in the image of the shell
    ``|rho - r| < eta`` is traced back along its ray by solving
    ``rho' + (eta/r) w((rho' - r)/eta) = rho`` to ``1e-12 * eta`` by
    bisection, and ``a`` is sampled bilinearly at the preimage.  Where the
    radial map folds, all preimages contribute with the sign of the map's
    slope (the degree-weighted pushforward), which reduces to the inverse
    map wherever it is monotone and keeps constants fixed.
    """
    f = a.field if hasattr(a, "field") else a
    grid = f.grid
    eta = cfg.eta
    if not r > eta:
        raise AdmissibilityError(f"radius {r} must exceed eta={eta}")
    pieces = cfg.wave.monotone_pieces(r)
    if len(pieces) > 2 and cfg.fold_policy == "reject":
        raise AdmissibilityError(f"radial map folds at r={r:.4g} < r_min={cfg.r_min:.4g}")
    rho, xi_x, xi_y = _rho_xi(grid, y)
    # the shell |t| < 1 is mapped onto [-1, s_max), which reaches past the shell when w/r > 0
    s_max = max(1.0, float(np.max(cfg.wave.t_table + cfg.wave.w_table / r)))
    t_all = (rho - r) / eta
    region = (t_all > -1.0) & (t_all < s_max + 1e-9)
    out = np.array(f.values)
    if not np.any(region):
        return ScalarField(grid, out)
    s = t_all[region]
    px, py = xi_x[region], xi_y[region]
    # transport the variation from a reference level (the corner value, a0 for
    # admissible phantoms) so constants and untouched background stay exact
    ref = f.values[0, 0]
    var = f.values - ref
    # points beyond the shell are also their own (identity) preimage
    acc = np.where(s >= 1.0, var[region], 0.0)
    for hit, t, sign in _preimages(cfg.wave, r, s, pieces):
        rho_p = r + eta * t
        # preimages outside the grid take the nearest boundary value
        vals = bilinear_sample(var, grid, y[0] + rho_p * px[hit], y[1] + rho_p * py[hit], clamp=True)
        acc[hit] += sign * vals
    out[region] = ref + acc
    return ScalarField(grid, out)


@dataclass
class Measurement:
    volume: float
    boundary: float

    @property
    def discrepancy(self) -> float:
        scale = max(abs(self.volume), abs(self.boundary))
        return abs(self.volume - self.boundary) / scale if scale > 0 else 0.0

    def __float__(self):
        return self.volume


def _factor(a, bc, factor):
    if factor is not None:
        return factor
    f = a.field if hasattr(a, "field") else a
    return FluenceFactor(f, bc)


def measure(a, bc: BoundaryData, y, r: float, cfg: AcousticConfig, factor: FluenceFactor = None,
            phi: np.ndarray = None, tol: float = 1e-10) -> Measurement:
    """Physical measurement in both its volume and boundary-correlation forms.

    Returns a :class:`Measurement`; ``float(m)`` is the volume form
    ``eta**-2 * int (a_v - a) phi phi_v`` and ``m.boundary`` the form
    ``eta**-2 / l * int_boundary (phi - phi_v) g``.
    """
    f = a.field if hasattr(a, "field") else a
    factor = _factor(f, bc, factor)
    if phi is None:
        phi = factor.solve().reshape(f.grid.shape)
    a_v = displace_absorption(f, cfg, y, r)
    da = a_v.values - f.values
    if not np.any(da):
        return Measurement(0.0, 0.0)
    delta = factor.correction(a_v.values, phi, tol=tol)
    w = f.grid.trapezoid_weights()
    eta2 = cfg.eta**2
    volume = float(np.sum(w * da * phi * (phi + delta))) / eta2
    boundary = -float(factor.b @ delta.ravel()) / eta2
    return Measurement(volume, boundary)


def edge_jumps(a) -> Tuple[np.ndarray, ...]:
    """Edge form of ``Da``: jumps ``a[i+1]-a[i]`` on horizontal edges and ``a[j+1]-a[j]`` on vertical edges."""
    v = a.field.values if hasattr(a, "field") else (a.values if isinstance(a, ScalarField) else np.asarray(a))
    return np.diff(v, axis=1), np.diff(v, axis=0)


def measure_ideal(a, phi, y, r: float, cfg: AcousticConfig) -> float:
    """Ideal measurement ``-eta**-2 * int phi^2 v . Da`` with ``Da`` as an edge measure.

    A jump across an edge contributes ``jump * transverse spacing`` times
    ``phi^2 v`` evaluated at the edge midpoint, with the harmonic mean of
    ``phi^2`` over the two end nodes (the face value the reconstruction uses).
    """
    f = a.field if hasattr(a, "field") else a
    grid = f.grid
    phi_v = phi.values if isinstance(phi, ScalarField) else np.asarray(phi)
    return _ideal_from_edges(grid, *edge_jumps(f), phi_v**2, cfg, y, r)


def _ideal_from_edges(grid, jx, jy, phi2, cfg, y, r):
    eta = cfg.eta
    x, yy = grid.x, grid.y
    total = 0.0
    # horizontal edges: midpoints between columns, direction e_x
    fx, fy = face_harmonic_mean(phi2)
    mx, my = np.meshgrid(0.5 * (x[1:] + x[:-1]), yy)
    total += _edge_sum(jx * grid.hy * _row_trap(grid.ny)[:, None], fx[:, :-1], mx, my, y, r, eta, cfg.wave, axis=0)
    mx, my = np.meshgrid(x, 0.5 * (yy[1:] + yy[:-1]))
    total += _edge_sum(jy * grid.hx * _row_trap(grid.nx)[None, :], fy[:-1, :], mx, my, y, r, eta, cfg.wave, axis=1)
    return -total / eta**2


def _row_trap(n):
    w = np.ones(n)
    w[[0, -1]] = 0.5
    return w


def _edge_sum(mass, phi2, mx, my, y, r, eta, wave, axis):
    nz = mass != 0
    if not np.any(nz):
        return 0.0
    dx, dy = mx[nz] - y[0], my[nz] - y[1]
    rho = np.hypot(dx, dy)
    mag = eta / r * wave((rho - r) / eta)
    comp = (dx if axis == 0 else dy) / np.where(rho > 0, rho, 1.0)
    return float(np.sum(mass[nz] * phi2[nz] * mag * comp))


def sweep_measurements(a, bc: BoundaryData, cfg: AcousticConfig, check_every: int = 0,
                       check_tol: float = 1e-2, ideal: bool = False) -> Sinogram:
    """Measurement for every (centre, radius) pair.

    With ``check_every > 0`` the volume and boundary forms are compared at
    every ``check_every``-th pair and a discrepancy above ``check_tol``
    raises.  With ``ideal=True`` the ideal measurement is swept instead.
    Each pair is independent, so ``cfg.n_threads > 1`` evaluates centres
    concurrently without changing the result.
    """
    f = a.field if hasattr(a, "field") else a
    factor = FluenceFactor(f, bc)
    phi = factor.solve().reshape(f.grid.shape)
    values = np.zeros((len(cfg.centers), len(cfg.radii)))

    def run_center(k):
        y = cfg.centers[k]
        for m, r in enumerate(cfg.radii):
            try:
                if ideal:
                    values[k, m] = measure_ideal(f, phi, y, r, cfg)
                    continue
                meas = measure(f, bc, y, r, cfg, factor=factor, phi=phi)
            except Exception as exc:
                raise RuntimeError(f"measurement failed at centre {k} {tuple(y)}, radius {r:.6g}: {exc}") from exc
            values[k, m] = meas.volume
            idx = k * len(cfg.radii) + m
            if check_every and idx % check_every == 0 and meas.discrepancy > check_tol:
                raise RuntimeError(
                    f"volume and boundary measurement forms disagree at centre {k}, radius {r:.6g}: "
                    f"relative discrepancy {meas.discrepancy:.3e}"
                )

    if cfg.n_threads > 1:
        with ThreadPoolExecutor(cfg.n_threads) as pool:
            list(pool.map(run_center, range(len(cfg.centers))))
    else:
        for k in range(len(cfg.centers)):
            run_center(k)
    return Sinogram(cfg.centers, cfg.radii, values)


def p_transform(m: Sinogram) -> Sinogram:
    """``P[m](y, r) = -int_{r_1}^r m(y, rho) d rho`` by cumulative trapezoid from the first radius."""
    return m.with_values(-cumulative_trapezoid(m.values, m.radii, axis=1, initial=0.0))


def density_profile(a, cfg: AcousticConfig) -> Sinogram:
    """``phi_eta(y, r) = int w_eta(|x-y| - r) |Da|(dx)`` with ``|Da|`` as the isotropic edge measure.

    ``|Da|`` puts ``(pi/8) |jump| * line spacing`` at the midpoint of every
    axis and diagonal edge, the same weights as
    :func:`aotomo.phantom.total_variation_estimate`.
    """
    f = a.field if hasattr(a, "field") else a
    pts, mass = tv_measure(f)
    values = np.zeros((len(cfg.centers), len(cfg.radii)))
    for k, y in enumerate(cfg.centers):
        rho = np.hypot(pts[:, 0] - y[0], pts[:, 1] - y[1])
        for m, r in enumerate(cfg.radii):
            values[k, m] = np.sum(mass * cfg.wave.kernel(rho - r, cfg.eta))
    return Sinogram(cfg.centers, cfg.radii, values)


def tv_measure(f: ScalarField):
    """Atoms ``(points, masses)`` of the isotropic edge measure of ``|Da|``."""
    g = f.grid
    v = f.values
    X, Y = g.coords()
    sd = g.hx * g.hy / np.hypot(g.hx, g.hy)
    parts = [
        (np.abs(v[:, 1:] - v[:, :-1]) * g.hy, 0.5 * (X[:, 1:] + X[:, :-1]), Y[:, 1:]),
        (np.abs(v[1:, :] - v[:-1, :]) * g.hx, X[1:, :], 0.5 * (Y[1:, :] + Y[:-1, :])),
        (np.abs(v[1:, 1:] - v[:-1, :-1]) * sd, 0.5 * (X[1:, 1:] + X[:-1, :-1]), 0.5 * (Y[1:, 1:] + Y[:-1, :-1])),
        (np.abs(v[1:, :-1] - v[:-1, 1:]) * sd, 0.5 * (X[1:, :-1] + X[:-1, 1:]), 0.5 * (Y[1:, :-1] + Y[:-1, 1:])),
    ]
    pts, mass = [], []
    for m, px, py in parts:
        nz = m > 0
        pts.append(np.column_stack([px[nz], py[nz]]))
        mass.append(np.pi / 8 * m[nz])
    return np.vstack(pts), np.concatenate(mass)
