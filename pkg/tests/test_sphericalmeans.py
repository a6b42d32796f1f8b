import numpy as np
import pytest

from aotomo.acoustics import AcousticConfig, Sinogram, sigma_inner
from aotomo.errors import GridMismatchError
from aotomo.fluence import solve_fluence
from aotomo.grid import Grid, SubdomainMask, VectorField, l2_norm
from aotomo.phantom import disc_phantom, rasterize
from aotomo.sphericalmeans import (
    RadonOperator,
    convolution_identity_check,
    flow_apply,
    flow_gradient_identity_check,
    harmonic_correction,
    internal_data,
    radon_apply,
    radon_invert,
    radon_laplacian_identity_check,
)
from aotomo.validation import gaussian_bump


def bump_at(g, c, s=0.08):
    return g.sample(lambda X, Y: np.exp(-((X - c[0]) ** 2 + (Y - c[1]) ** 2) / (2 * s**2)))


def test_constant_gives_two_pi():
    g = Grid(128, 80)
    op = RadonOperator(g, [[0.8, 0.5], [0.5, 0.4]], np.linspace(0.05, 0.3, 6), n_theta=360)
    np.testing.assert_allclose(radon_apply(g.full(1.0), op).values, 2 * np.pi, rtol=1e-6)


def test_disc_indicator_arc_angle():
    g = Grid(512, 320)
    c, rho0 = np.array([0.8, 0.5]), 0.2
    X, Y = g.coords()
    f = g.field(((X - c[0]) ** 2 + (Y - c[1]) ** 2 < rho0**2).astype(float))
    y = np.array([0.45, 0.5])
    dist = np.linalg.norm(c - y)
    radii = np.array([0.05, 0.2, 0.3, 0.4, 0.5, 0.6])
    op = RadonOperator(g, [y], radii, n_theta=2880)
    got = radon_apply(f, op).values[0]
    cosang = np.clip((dist**2 + radii**2 - rho0**2) / (2 * dist * radii), -1, 1)
    exact = np.where(radii + dist <= rho0, 2 * np.pi, 2 * np.arccos(cosang))
    np.testing.assert_allclose(got, exact, atol=0.02 * 2 * np.pi)


def test_linearity_and_adjoint(rng):
    g = Grid(48, 30)
    op = RadonOperator(g, [[0.8, 0.5], [0.3, 0.2]], np.linspace(0.1, 0.6, 7), n_theta=180)
    f, h = g.field(rng.standard_normal(g.shape)), g.field(rng.standard_normal(g.shape))
    lhs = radon_apply(f * 2.0 + h * -0.5, op).values
    rhs = 2.0 * radon_apply(f, op).values - 0.5 * radon_apply(h, op).values
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
    s = rng.standard_normal(op.shape)
    left = np.sum(radon_apply(f, op).values * s)
    right = np.sum(f.values * op.adjoint(s).values)
    assert abs(left - right) <= 1e-10 * abs(left) + 1e-12
    with pytest.raises(GridMismatchError):
        op.adjoint(np.zeros((3, 3)))


def test_flow_of_constant_and_radial_fields():
    g = Grid(128, 80)
    y = np.array([0.8, 0.5])
    radii = np.linspace(0.05, 0.35, 7)
    op = RadonOperator(g, [y], radii, n_theta=720)
    X, Y = g.coords()
    const = VectorField(g, np.full(g.shape, 0.7), np.full(g.shape, -1.2))
    np.testing.assert_allclose(flow_apply(const, op).values, 0.0, atol=1e-12)
    radial = VectorField(g, X - y[0], Y - y[1])
    np.testing.assert_allclose(flow_apply(radial, op).values[0], 2 * np.pi * radii, rtol=1e-10)


def test_flow_gradient_identity_centered_bump():
    g = Grid(256, 160)
    u = bump_at(g, (0.8, 0.5))
    op = RadonOperator(g, [[0.8, 0.5], [0.7, 0.45]], np.linspace(0.02, 0.4, 96), n_theta=720)
    assert flow_gradient_identity_check(u, op) <= 0.02


def test_laplacian_identity_and_refinement():
    errs = []
    for n, nt in (((128, 80), 360), ((256, 160), 720)):
        g = Grid(*n)
        cfg = AcousticConfig.on_circle(0.02, n_centers=8, n_radii=96)
        errs.append(radon_laplacian_identity_check(gaussian_bump(g), RadonOperator.from_config(g, cfg, n_theta=nt)))
    assert errs[1] <= 0.05
    assert errs[1] < errs[0]
    g = Grid(64, 40)
    op = RadonOperator(g, [[0.8, 0.5]], np.linspace(0.1, 0.3, 5), n_theta=90)
    assert radon_laplacian_identity_check(g.zeros(), op) == 0.0


def test_convolution_identity(bc):
    g = Grid(256, 160)
    a = rasterize(disc_phantom(0.5, center=(0.85, 0.5), radius=0.15), g)
    phi = solve_fluence(a, bc).phi
    cfg = AcousticConfig.on_circle(0.02, n_centers=4, n_radii=48)
    assert convolution_identity_check(a, phi, cfg) <= 0.05
    assert convolution_identity_check(g.full(1.0), phi, cfg) == 0.0


def test_radon_invert_round_trip():
    g = Grid(128, 80)
    mask = SubdomainMask.disc(g, (0.8, 0.5), 0.48)
    f0 = bump_at(g, (0.85, 0.55), 0.08)
    errs = []
    for nc in (64, 128):
        cfg = AcousticConfig.on_circle(0.02, n_centers=nc, n_radii=96)
        op = RadonOperator.from_config(g, cfg, n_theta=720, support=mask)
        rec = radon_invert(radon_apply(f0, op), op, reg=1e-6)
        errs.append(l2_norm(rec - f0, g, mask) / l2_norm(f0, g, mask))
    assert errs[1] <= 0.05
    assert errs[1] <= errs[0] * 1.05
    zero = radon_invert(Sinogram(cfg.centers, cfg.radii, np.zeros(op.shape)), op)
    assert np.all(zero.values == 0)


def test_radon_invert_with_offsets_recovers_centre_constants():
    g = Grid(96, 60)
    mask = SubdomainMask.disc(g, (0.8, 0.5), 0.48)
    f0 = bump_at(g, (0.85, 0.55), 0.1)
    cfg = AcousticConfig.on_circle(0.03, n_centers=48, n_radii=48)
    op = RadonOperator.from_config(g, cfg, n_theta=360, support=mask)
    shift = np.linspace(-1, 1, 48)
    s = radon_apply(f0, op)
    res = radon_invert(s.with_values(s.values + shift[:, None]), op, reg=1e-6, offsets=True, return_info=True)
    np.testing.assert_allclose(res.offsets, shift, atol=0.05)
    assert l2_norm(res.field - f0, g, mask) / l2_norm(f0, g, mask) <= 0.1


def test_radon_invert_rejects_mismatch():
    g = Grid(48, 30)
    op = RadonOperator(g, [[0.8, 0.5]], [0.1, 0.2], n_theta=90)
    with pytest.raises(GridMismatchError):
        radon_invert(Sinogram([[0.8, 0.5]], [0.1, 0.2, 0.3], np.zeros((1, 3))), op)


def test_harmonic_correction_oracles():
    g = Grid(96, 60)
    mask = SubdomainMask.disc(g, (0.8, 0.5), 0.4)
    X, Y = g.coords()
    assert np.abs(harmonic_correction(g.field(X), mask).values).max() <= 1e-10
    # a field that already vanishes on the mask boundary is unchanged
    psi = bump_at(g, (0.8, 0.5), 0.06)
    psi0 = harmonic_correction(psi, mask)
    np.testing.assert_allclose(harmonic_correction(psi0, mask).values, psi0.values, atol=1e-12)
    # superposition with a harmonic perturbation
    pert = g.field(X**2 - Y**2 + 0.3 * X * Y - 2 * Y)
    np.testing.assert_allclose(harmonic_correction(psi0 + pert, mask).values, psi0.values, atol=1e-9)
    assert np.all(psi0.values[mask.boundary()] == 0) and np.all(psi0.values[~mask.inside] == 0)


def test_internal_data_of_zero_sinogram():
    g = Grid(48, 30)
    cfg = AcousticConfig.on_circle(0.05, n_centers=8, n_radii=8)
    op = RadonOperator.from_config(g, cfg, n_theta=90)
    out = internal_data(Sinogram(cfg.centers, cfg.radii, np.zeros((8, 8))), op)
    assert np.all(out.values == 0)


def test_sigma_norm_of_transform_is_positive():
    g = Grid(64, 40)
    cfg = AcousticConfig.on_circle(0.05, n_centers=8, n_radii=8)
    s = radon_apply(bump_at(g, (0.8, 0.5)), RadonOperator.from_config(g, cfg, n_theta=90))
    assert sigma_inner(s, s) > 0
