import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aotomo.grid import (
    Grid,
    ScalarField,
    SubdomainMask,
    VectorField,
    bilinear_sample,
    divergence,
    edge_divergence,
    edge_gradient,
    face_harmonic_mean,
    gradient,
    inner,
    integrate,
    laplacian,
)


def test_grid_spacing_and_coords():
    g = Grid(5, 3)
    assert g.hx == pytest.approx(0.4) and g.hy == pytest.approx(0.5)
    X, Y = g.coords()
    assert X.shape == (3, 5) and X[0, -1] == pytest.approx(1.6) and Y[-1, 0] == pytest.approx(1.0)


def test_grid_rejects_degenerate():
    with pytest.raises(ValueError):
        Grid(2, 10)
    with pytest.raises(ValueError):
        Grid(10, 10, lx=0.0)


def test_gradient_of_constant_and_affine(small_grid):
    g = small_grid
    d = gradient(g.full(3.0))
    assert np.all(d.ux == 0) and np.all(d.uy == 0)
    d = gradient(g.sample(lambda X, Y: X))
    np.testing.assert_allclose(d.ux, 1.0, atol=1e-12)
    np.testing.assert_allclose(d.uy, 0.0, atol=1e-12)


def test_gradient_second_order():
    def err(n):
        g = Grid(*n)
        f = g.sample(lambda X, Y: np.sin(np.pi * X) * np.sin(np.pi * Y))
        X, Y = g.coords()
        d = gradient(f)
        ex = np.pi * np.cos(np.pi * X) * np.sin(np.pi * Y)
        ey = np.pi * np.sin(np.pi * X) * np.cos(np.pi * Y)
        return max(np.abs(d.ux - ex).max(), np.abs(d.uy - ey).max())

    order = np.log2(err((128, 80)) / err((256, 160)))
    assert order >= 1.9


def test_divergence_affine_and_constant(small_grid):
    g = small_grid
    X, Y = g.coords()
    assert np.allclose(divergence(VectorField(g, np.full(g.shape, 2.0), np.full(g.shape, -1.0))).values, 0.0)
    div = divergence(VectorField(g, X, Y)).values
    np.testing.assert_allclose(div[1:-1, 1:-1], 2.0, atol=1e-10)


def test_divergence_of_gradient_matches_laplacian():
    g = Grid(256, 160)
    s = 0.08
    X, Y = g.coords()
    r2 = (X - 0.8) ** 2 + (Y - 0.5) ** 2
    f = g.field(np.exp(-r2 / (2 * s**2)))
    lap = (r2 / s**4 - 2 / s**2) * f.values
    got = divergence(gradient(f)).values
    assert np.linalg.norm(got - lap) / np.linalg.norm(lap) <= 1e-2


def test_gradient_divergence_adjoint(rng):
    g = Grid(40, 30)
    f = g.field(rng.standard_normal(g.shape))
    ux = np.zeros(g.shape)
    uy = np.zeros(g.shape)
    ux[2:-2, 2:-2] = rng.standard_normal((g.ny - 4, g.nx - 4))
    uy[2:-2, 2:-2] = rng.standard_normal((g.ny - 4, g.nx - 4))
    F = VectorField(g, ux, uy)
    gf = gradient(f)
    lhs = inner(gf.ux, ux, g) + inner(gf.uy, uy, g) + inner(f, divergence(F), g)
    scale = np.sqrt(inner(f, f, g)) * np.sqrt(inner(ux, ux, g) + inner(uy, uy, g))
    assert abs(lhs) <= 1e-10 * scale


def test_edge_divergence_of_edge_gradient_is_five_point_laplacian(rng):
    g = Grid(20, 15)
    f = g.field(rng.standard_normal(g.shape))
    got = edge_divergence(edge_gradient(f)).values
    np.testing.assert_allclose(got[1:-1, 1:-1], laplacian(f).values[1:-1, 1:-1], rtol=1e-10, atol=1e-8)


def test_integrate_area_and_affine():
    g = Grid(65, 41)
    assert integrate(g.full(1.0)) == pytest.approx(1.6)
    assert integrate(g.zeros()) == 0.0
    # trapezoid is exact for affine integrands
    assert integrate(g.sample(lambda X, Y: 2 * X + Y)) == pytest.approx(1.6**2 + 0.8, rel=1e-12)


def test_integrate_smoothed_disc():
    g = Grid(256, 160)
    X, Y = g.coords()
    rho = np.hypot(X - 0.8, Y - 0.5)
    f = g.field(0.5 * (1 - np.tanh((rho - 0.3) / 0.005)))
    assert integrate(f) == pytest.approx(np.pi * 0.09, rel=1e-2)


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0, 3))
def test_integrate_linear_and_monotone(alpha, beta, shift):
    g = Grid(17, 11)
    X, Y = g.coords()
    f, h = g.field(np.sin(3 * X)), g.field(Y**2)
    assert integrate(f * alpha + h * beta) == pytest.approx(alpha * integrate(f) + beta * integrate(h), abs=1e-9)
    assert integrate(f) <= integrate(f + shift) + 1e-12


def test_disc_mask_and_shrink():
    g = Grid(128, 80)
    m = SubdomainMask.disc(g, (0.8, 0.5), 0.48)
    assert m.inside.sum() > 0
    assert not np.any(m.inside & g.boundary_mask())
    inner_ = m.shrunk(0.1)
    assert np.all(m.inside[inner_])
    assert np.all(m.interior() <= m.inside)
    with pytest.raises(ValueError):
        SubdomainMask.disc(g, (0.8, 0.5), 0.6)


def test_face_harmonic_mean_values():
    v = np.array([[1.0, 3.0], [2.0, 2.0]])
    fx, fy = face_harmonic_mean(v)
    assert fx[0, 0] == pytest.approx(1.5) and fx[1, 0] == pytest.approx(2.0)
    assert fy[0, 0] == pytest.approx(4 / 3) and fy[0, 1] == pytest.approx(2.4)
    assert np.all(fx[:, -1] == 0) and np.all(fy[-1, :] == 0)


def test_bilinear_sample_exact_for_bilinear_fields():
    g = Grid(11, 7)
    X, Y = g.coords()
    vals = 1 + 2 * X - Y + 0.5 * X * Y
    px = np.array([0.13, 0.77, 1.59])
    py = np.array([0.21, 0.5, 0.99])
    np.testing.assert_allclose(bilinear_sample(vals, g, px, py), 1 + 2 * px - py + 0.5 * px * py, rtol=1e-12)
    out = bilinear_sample(vals, g, np.array([-1.0]), np.array([0.5]), fill=-7.0)
    assert out[0] == -7.0
    clamped = bilinear_sample(vals, g, np.array([-1.0]), np.array([0.0]), clamp=True)
    assert clamped[0] == pytest.approx(vals[0, 0])


def test_field_arithmetic_checks_grid():
    a = Grid(5, 5).full(1.0)
    b = Grid(6, 5).full(1.0)
    with pytest.raises(Exception):
        a + b
    assert isinstance(a + 1.0, ScalarField)
