"""Named numerical check suites run by ``aotomo validate``.

Each suite returns a list of :class:`Check` records with the measured value
and the bound it is held to.  Bounds default to the acceptance tolerances;
problem sizes are kept small enough for a desk machine.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from .acoustics import (
    AcousticConfig,
    Sinogram,
    density_profile,
    displace_absorption,
    measure,
    measure_ideal,
    sigma_inner,
)
from .fluence import BoundaryData, FluenceFactor, solve_fluence
from .grid import Grid, ScalarField, SubdomainMask, VectorField, gradient, l2_norm
from .helmholtz import (
    ground_truth_internal_data,
    helmholtz_compose,
    helmholtz_decompose,
    kernel_operator_bound_check,
    mollifier_rate_check,
)
from .phantom import AbsorptionSpec, Inclusion, disc_phantom, rasterize
from .reconstruct import ReconstructConfig, fixed_point_reconstruct
from .sphericalmeans import (
    RadonOperator,
    flow_gradient_identity_check,
    internal_data,
    radon_laplacian_identity_check,
    synthetic_ideal_measurement,
)


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    bound: float
    upper: bool = True  # value must be <= bound; False means >= bound

    @property
    def passed(self) -> bool:
        if not np.isfinite(self.value):
            return False
        return self.value <= self.bound if self.upper else self.value >= self.bound

    def line(self) -> str:
        op = "<=" if self.upper else ">="
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.value:.4g} {op} {self.bound:.4g}"


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def gaussian_bump(grid: Grid, center=(0.8, 0.55), sigma: float = 0.08) -> ScalarField:
    return grid.sample(lambda X, Y: np.exp(-((X - center[0]) ** 2 + (Y - center[1]) ** 2) / (2 * sigma**2)))


def suite_radon(grid: Grid = None, n_centers: int = 32, n_radii: int = 192, n_theta: int = 720, **_) -> List[Check]:
    """Partition of unity, the two flow identities and the perpendicular-gradient null space."""
    grid = grid or Grid(256, 160)
    cfg = AcousticConfig.on_circle(0.02, n_centers=n_centers, n_radii=n_radii)
    op = RadonOperator.from_config(grid, cfg, n_theta=n_theta)
    # R[1] on circles that stay inside the grid
    X0, Y0 = grid.x0, grid.y0
    c, r = cfg.centers, cfg.radii
    inside = ((c[:, :1] - r[None, :] > X0) & (c[:, :1] + r[None, :] < X0 + grid.lx)
              & (c[:, 1:] - r[None, :] > Y0) & (c[:, 1:] + r[None, :] < Y0 + grid.ly))
    ones = op.apply(grid.full(1.0)).values
    u = gaussian_bump(grid)
    gu = gradient(u)
    perp = VectorField(grid, -gu.uy, gu.ux)
    flow_scale = np.abs(op.flow(gu).values).max()
    return [
        Check("R[1] = 2 pi (max abs error)", float(np.abs(ones[inside] - 2 * np.pi).max()), 1e-6),
        Check("flow of gradient = d/dr R (rel L2)", flow_gradient_identity_check(u, op), 0.05),
        Check("R of Laplacian identity (rel L2)", radon_laplacian_identity_check(u, op), 0.05),
        Check("flow of perpendicular gradient / flow scale", float(np.abs(op.flow(perp).values).max() / flow_scale), 1e-3),
    ]


def random_compact_field(grid: Grid, rng: np.random.Generator, collar: int = 4) -> VectorField:
    """Random smooth-ish edge field that vanishes on a boundary collar."""
    ux = rng.standard_normal(grid.shape)
    uy = rng.standard_normal(grid.shape)
    keep = np.zeros(grid.shape, dtype=bool)
    keep[collar:-collar, collar:-collar] = True
    X, Y = grid.coords()
    window = np.sin(np.pi * (X - grid.x0) / grid.lx) * np.sin(np.pi * (Y - grid.y0) / grid.ly)
    return VectorField(grid, ux * window * keep, uy * window * keep, layout="edge")


def suite_helmholtz(grid: Grid = None, n_fields: int = 50, seed: int = 0, **_) -> List[Check]:
    """Round trip and orthogonality of the decomposition on random compactly supported fields."""
    grid = grid or Grid(96, 64)
    rng = np.random.default_rng(seed)
    worst_trip = worst_orth = 0.0
    for _k in range(n_fields):
        U = random_compact_field(grid, rng)
        parts = helmholtz_decompose(U)
        V = helmholtz_compose(parts)
        norm2 = float(np.sum(U.ux**2 + U.uy**2))
        trip = np.sqrt(np.sum((V.ux - U.ux) ** 2 + (V.uy - U.uy) ** 2) / norm2)
        gx, gy = parts.gradient_part()
        cx, cy = parts.curl_part()
        orth = abs(float(np.sum(gx * cx + gy * cy))) / norm2
        worst_trip, worst_orth = max(worst_trip, trip), max(worst_orth, orth)
    return [
        Check("round trip |U - grad psi - curl g| / |U| (worst)", worst_trip, 1e-10),
        Check("part orthogonality |<grad psi, curl g>| / |U|^2 (worst)", worst_orth, 1e-10),
    ]


def suite_mollifier(seed: int = 0, **_) -> List[Check]:
    """Mollifier convergence slopes and the kernel-operator bound."""
    return [
        Check("mollifier slope, smooth, alpha=1", mollifier_rate_check(1.0, np.inf), 0.8, upper=False),
        Check("mollifier slope, kinked, alpha=1, beta=1/2", mollifier_rate_check(1.0, 0.5), 0.3, upper=False),
        Check("mollifier slope, smooth, alpha=0", mollifier_rate_check(0.0, np.inf), 0.8, upper=False),
        Check("mollifier slope, kinked, alpha=0, beta=1/2", mollifier_rate_check(0.0, 0.5), 0.3, upper=False),
        Check("kernel operator bound ratio (worst of 100)", kernel_operator_bound_check(100, seed=seed), 1.0),
    ]


def suite_density(grid: Grid = None, etas=(0.04, 0.02, 0.01), **_) -> List[Check]:
    """Fitted exponent of the density-profile norm against eta."""
    grid = grid or Grid(512, 320)
    a = rasterize(disc_phantom(0.5, center=(0.85, 0.5), radius=0.15), grid)
    norms = []
    for eta in etas:
        cfg = AcousticConfig.on_circle(eta, n_centers=16, n_radii=int(round(1.0 / eta * 4)))
        norms.append(density_profile(a, cfg).norm())
    return [Check("density profile L2 exponent", loglog_slope(etas, norms), -0.35, upper=False)]


def rate_sweep(a, bc: BoundaryData, eta: float, centers: np.ndarray, radii: np.ndarray):
    """``(M, M~)`` at the given centres and radii, sharing one factorisation."""
    f = a.field if hasattr(a, "field") else a
    cfg = AcousticConfig(eta, centers, radii)
    factor = FluenceFactor(f, bc)
    phi = factor.solve().reshape(f.grid.shape)
    M = np.array([[measure(f, bc, y, r, cfg, factor=factor, phi=phi).volume for r in radii] for y in centers])
    Mt = np.array([[measure_ideal(f, phi, y, r, cfg) for r in radii] for y in centers])
    return Sinogram(centers, radii, M), Sinogram(centers, radii, Mt)


def measurement_rate(grid: Grid = None, etas=(0.04, 0.02, 0.01), n_centers: int = 4, n_radii: int = 40):
    """``||M_eta - M~_eta||_{L2(Sigma)}`` for each ``eta`` on a fixed set of centres and radii."""
    grid = grid or Grid(512, 320)
    bc = BoundaryData(0.1, 1.0)
    a = rasterize(disc_phantom(0.5, center=(0.85, 0.5), radius=0.15), grid)
    centers = AcousticConfig.on_circle(0.04, n_centers=n_centers).centers
    radii = np.linspace(0.1, 0.9, n_radii)
    errs = []
    for eta in etas:
        M, Mt = rate_sweep(a, bc, eta, centers, radii)
        d = M.with_values(M.values - Mt.values)
        errs.append(np.sqrt(sigma_inner(d, d)))
    return np.array(errs)


def suite_measurement_rate(grid: Grid = None, etas=(0.04, 0.02, 0.01), **_) -> List[Check]:
    errs = measurement_rate(grid, etas)
    return [Check("slope of ||M - M~|| against eta", loglog_slope(etas, errs), 0.2, upper=False)]


def suite_contraction(grid: Grid = None, **_) -> List[Check]:
    """Small-contrast disc closed loop through the fixed-point iteration."""
    grid = grid or Grid(128, 80)
    spec = disc_phantom(0.2, center=(0.85, 0.5), radius=0.15)
    a = rasterize(spec, grid)
    bc = BoundaryData(0.1, 1.0)
    mask = spec.support_mask(grid)
    phi = solve_fluence(a, bc).phi
    psi = ground_truth_internal_data(a, phi, mask)
    cfg = ReconstructConfig(a_lower=spec.a_lower, a_upper=spec.a_upper, a0=spec.a0)
    rec, trace = fixed_point_reconstruct(psi, bc, cfg, mask)
    inner = mask.shrunk(0.1)
    err = l2_norm(rec - a.field, grid, inner) / l2_norm(a.field, grid, inner)
    ratios = trace.contraction_ratios()
    zero, _ = fixed_point_reconstruct(grid.zeros(), bc, cfg, mask)
    return [
        Check("closed-loop interior relative L2 error", err, 0.10),
        Check("largest successive-difference ratio", float(ratios.max()) if ratios.size else 0.0, 1.0 - 1e-12),
        Check("iterations used", float(len(trace)), 10.0),
        Check("max |a - a0| for zero internal data", float(np.abs(zero.values - spec.a0).max()), 0.0),
    ]


def shift_l1_ladder(grid: Grid = None, etas=(0.04, 0.02, 0.01)) -> np.ndarray:
    """``||a_v - a||_{L1}`` for each ``eta`` on a shell running along the boundary of a fixed disc.

    A shell that crosses an edge transversally only moves an ``eta``-long
    piece of it, giving ``O(eta^2)``; the linear bound is attained when the
    shell follows the edge, so the shell is centred on the disc.
    """
    grid = grid or Grid(512, 320)
    spec = disc_phantom(0.5, center=(0.8, 0.5), radius=0.35)
    a = rasterize(spec, grid).field
    w = grid.trapezoid_weights()
    inc = spec.inclusions[0]
    y = np.asarray(inc.center, dtype=float)
    out = []
    for eta in etas:
        cfg = AcousticConfig(eta, y[None, :], np.array([inc.radius]))
        out.append(float(np.sum(w * np.abs(displace_absorption(a, cfg, y, inc.radius).values - a.values))))
    return np.array(out)


def suite_shift(grid: Grid = None, etas=(0.04, 0.02, 0.01), **_) -> List[Check]:
    q = shift_l1_ladder(grid, etas) / np.asarray(etas)
    return [Check("max/min of ||a_v - a||_L1 / eta over the eta ladder", float(q.max() / q.min()), 1.5)]


def two_disc_phantom() -> AbsorptionSpec:
    return AbsorptionSpec(inclusions=(Inclusion.disc((0.7, 0.45), 0.12, 1.5), Inclusion.disc((0.95, 0.6), 0.08, 1.3)))


def identity_pairs(n_pairs: int = 20, eta: float = 0.02, seed: int = 0):
    """``n_pairs`` (centre, radius) pairs whose shells cross the two-disc phantom, drawn reproducibly."""
    rng = np.random.default_rng(seed)
    spec = two_disc_phantom()
    centers = AcousticConfig.on_circle(eta, n_centers=32).centers
    pairs = []
    while len(pairs) < n_pairs:
        y = centers[rng.integers(len(centers))]
        inc = spec.inclusions[rng.integers(len(spec.inclusions))]
        d = float(np.hypot(*(np.asarray(inc.center) - y)))
        r = d + rng.uniform(-0.8, 0.8) * inc.radius
        pairs.append((y, r))
    return pairs


def identity_discrepancy(grid: Grid = None, n_pairs: int = 20, eta: float = 0.02, seed: int = 0) -> np.ndarray:
    """Relative volume/boundary discrepancy of the measurement at reproducible shell-crossing pairs."""
    grid = grid or Grid(256, 160)
    a = rasterize(two_disc_phantom(), grid).field
    bc = BoundaryData(0.1, 1.0)
    factor = FluenceFactor(a, bc)
    phi = factor.solve().reshape(grid.shape)
    out = []
    for y, r in identity_pairs(n_pairs, eta, seed):
        cfg = AcousticConfig(eta, y[None, :], np.array([r]))
        out.append(measure(a, bc, y, r, cfg, factor=factor, phi=phi, tol=1e-12).discrepancy)
    return np.array(out)


def smooth_absorption(grid: Grid, contrast: float = 0.5, center=(0.9, 0.55), sigma: float = 0.06,
                      cut: float = 0.4) -> ScalarField:
    """Gaussian absorption bump on a unit background, cut off well inside ``D`` (the cut jump is below 1e-5)."""
    X, Y = grid.coords()
    bump = np.exp(-((X - center[0]) ** 2 + (Y - center[1]) ** 2) / (2 * sigma**2))
    return grid.field(1 + contrast * bump * (np.hypot(X - 0.8, Y - 0.5) < cut))


def internal_data_closed_loop(grid: Grid = None, eta: float = 0.02, n_centers: int = 128, n_radii: int = 96,
                              reg: float = 1e-6) -> float:
    """Relative L2(D) error of ``Psi`` recovered from the ideal measurement synthesised from a known ``Psi``."""
    grid = grid or Grid(256, 160)
    bc = BoundaryData(0.1, 1.0)
    mask = SubdomainMask.disc(grid, (0.8, 0.5), 0.48)
    a = smooth_absorption(grid)
    phi = solve_fluence(a, bc).phi
    psi = ground_truth_internal_data(a, phi, mask)
    cfg = AcousticConfig.on_circle(eta, n_centers=n_centers, n_radii=n_radii)
    m = synthetic_ideal_measurement(psi, cfg)
    op = RadonOperator.from_config(grid, cfg, support=mask)
    rec = internal_data(m, op, reg=reg, mask=mask, maxiter=3000)
    return l2_norm(rec - psi, grid, mask) / l2_norm(psi, grid, mask)


def suite_internal(grid: Grid = None, **_) -> List[Check]:
    return [Check("internal-data closed loop relative L2(D) error", internal_data_closed_loop(grid), 0.10)]


def suite_identity(grid: Grid = None, seed: int = 0, **_) -> List[Check]:
    d = identity_discrepancy(grid, seed=seed)
    return [Check("worst volume/boundary discrepancy over 20 pairs", float(d.max()), 1e-2)]


SUITES: Dict[str, Callable[..., List[Check]]] = {
    "radon": suite_radon,
    "helmholtz": suite_helmholtz,
    "mollifier": suite_mollifier,
    "density": suite_density,
    "measurement-rate": suite_measurement_rate,
    "contraction": suite_contraction,
    "shift": suite_shift,
    "identity": suite_identity,
    "internal": suite_internal,
}


def run_suite(name: str, **kw) -> List[Check]:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    return SUITES[name](**kw)
