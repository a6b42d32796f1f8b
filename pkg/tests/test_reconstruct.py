import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.integrate import cumulative_trapezoid

from aotomo.errors import AdmissibilityError, DivergenceError
from aotomo.fluence import solve_fluence
from aotomo.grid import Grid, SubdomainMask, l2_norm
from aotomo.helmholtz import ground_truth_internal_data
from aotomo.phantom import disc_phantom, rasterize
from aotomo.reconstruct import (
    ReconstructConfig,
    elliptic_tilde_solve,
    fixed_point_reconstruct,
    stability_probe,
    truncate,
    update_absorption,
)

CENTER, RADIUS = (0.8, 0.5), 0.4


def test_config_invariants():
    with pytest.raises(AdmissibilityError):
        ReconstructConfig(a_lower=1.5, a0=1.0)
    with pytest.raises(AdmissibilityError):
        ReconstructConfig(boundary_mode="other")
    with pytest.raises(AdmissibilityError):
        ReconstructConfig(max_iters=0)


def test_truncate_cases():
    g = Grid(8, 6)
    cfg = ReconstructConfig()
    inside = g.full(1.4)
    assert np.array_equal(truncate(inside, cfg).values, inside.values)
    assert np.all(truncate(g.full(cfg.a_upper + 1), cfg).values == cfg.a_upper)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (6, 8), elements=st.floats(-5, 5)), arrays(np.float64, (6, 8), elements=st.floats(-5, 5)))
def test_truncate_is_one_lipschitz(x, y):
    g = Grid(8, 6)
    cfg = ReconstructConfig()
    a, b = g.field(x), g.field(y)
    assert l2_norm(truncate(a, cfg) - truncate(b, cfg), g) <= l2_norm(a - b, g) + 1e-12


def test_elliptic_zero_data_is_exact_zero():
    g = Grid(64, 40)
    mask = SubdomainMask.disc(g, CENTER, RADIUS)
    phi = g.sample(lambda X, Y: 0.5 + 0.1 * X)
    out = elliptic_tilde_solve(phi, g.zeros(), mask, ReconstructConfig(boundary_mode="theory"))
    assert np.all(out.values == 0)


def test_elliptic_constant_fluence_theory_mode():
    g = Grid(64, 40)
    mask = SubdomainMask.disc(g, CENTER, RADIUS)
    psi = g.sample(lambda X, Y: np.sin(5 * X) * Y)
    out = elliptic_tilde_solve(g.full(0.7), psi, mask, ReconstructConfig(boundary_mode="theory"))
    assert np.abs(out.values).max() == 0.0


def test_elliptic_rejects_nonpositive_fluence():
    g = Grid(32, 20)
    mask = SubdomainMask.disc(g, CENTER, RADIUS)
    with pytest.raises(AdmissibilityError):
        elliptic_tilde_solve(g.full(0.0), g.full(1.0), mask, ReconstructConfig())


def manufactured_error(n):
    """Recover at* = (R^2 - rho^2)^2 with phi* = exp(x), for which div(2 Psi grad log phi) = 2 dPsi/dx."""
    g = Grid(*n)
    mask = SubdomainMask.disc(g, CENTER, RADIUS)
    phi = g.sample(lambda X, Y: np.exp(X))

    def parts(X, Y):
        r2 = (X - CENTER[0]) ** 2 + (Y - CENTER[1]) ** 2
        q = np.where(r2 < RADIUS**2, RADIUS**2 - r2, 0.0)
        at = q**2
        dx = -4 * q * (X - CENTER[0])
        lap = np.where(r2 < RADIUS**2, 8 * r2 - 8 * q, 0.0)
        # div(phi^2 grad at) with phi^2 = exp(2x)
        return at, np.exp(2 * X) * (lap + 2 * dx)

    at_exact, _ = parts(*g.coords())
    xs = np.linspace(g.x0, g.x0 + g.lx, 20 * g.nx + 1)
    psi = np.zeros(g.shape)
    for j, yv in enumerate(g.y):
        _, f = parts(xs, np.full_like(xs, yv))
        psi[j] = np.interp(g.x, xs, 0.5 * cumulative_trapezoid(f, xs, initial=0.0))
    at = elliptic_tilde_solve(phi, g.field(psi), mask, ReconstructConfig(boundary_mode="theory"))
    return l2_norm(at.values - at_exact, g, mask) / l2_norm(at_exact, g, mask)


def test_elliptic_manufactured_solution():
    coarse, fine = manufactured_error((64, 40)), manufactured_error((128, 80))
    assert fine <= 0.02
    assert fine < coarse


def test_zero_internal_data_returns_background(bc):
    g = Grid(64, 40)
    spec = disc_phantom()
    cfg = ReconstructConfig(a_lower=spec.a_lower, a_upper=spec.a_upper)
    a, trace = fixed_point_reconstruct(g.zeros(), bc, cfg, spec.support_mask(g))
    assert np.all(a.values == cfg.a0)
    assert len(trace) == 1 and trace.diff_l2 == [0.0]


@pytest.fixture(scope="module")
def small_loop():
    from aotomo.fluence import BoundaryData

    bc = BoundaryData(0.1, 1.0)
    g = Grid(96, 60)
    spec = disc_phantom(0.2, center=(0.85, 0.5), radius=0.15)
    a = rasterize(spec, g)
    mask = spec.support_mask(g)
    psi = ground_truth_internal_data(a, solve_fluence(a, bc).phi, mask)
    cfg = ReconstructConfig(a_lower=spec.a_lower, a_upper=spec.a_upper)
    rec, trace = fixed_point_reconstruct(psi, bc, cfg, mask)
    return g, a, mask, psi, bc, cfg, rec, trace


def test_small_contrast_closed_loop(small_loop):
    g, a, mask, psi, bc, cfg, rec, trace = small_loop
    inner = mask.shrunk(0.1)
    assert l2_norm(rec - a.field, g, inner) / l2_norm(a.field, g, inner) <= 0.10
    assert len(trace) <= cfg.max_iters
    assert np.all(trace.contraction_ratios() < 1)
    d = np.asarray(trace.diff_l2)
    assert np.all(np.diff(d[1:]) <= 0)


def test_output_bounds_and_background(small_loop):
    g, a, mask, psi, bc, cfg, rec, trace = small_loop
    assert rec.values.min() >= cfg.a_lower and rec.values.max() <= cfg.a_upper
    assert np.all(rec.values[~mask.inside] == cfg.a0)


def test_fixed_point_consistency(small_loop):
    g, a, mask, psi, bc, cfg, rec, trace = small_loop
    phi = solve_fluence(rec, bc).phi
    at = elliptic_tilde_solve(phi, psi, mask, cfg)
    once = update_absorption(phi, psi, at, mask, cfg)
    assert l2_norm(once - rec, g) <= 2 * max(cfg.fp_tol * l2_norm(rec, g), trace.diff_l2[-1])


def test_divergence_is_reported(bc, monkeypatch):
    import aotomo.reconstruct as rc

    g = Grid(32, 20)
    spec = disc_phantom()
    mask = spec.support_mask(g)
    cfg = ReconstructConfig(a_lower=0.5, a_upper=100.0, max_iters=10)
    step = iter(range(1, 100))

    # each update moves further than the last
    def growing(phi, psi, at, mask_, cfg_):
        return g.full(1.0 + next(step) ** 2)

    monkeypatch.setattr(rc, "update_absorption", growing)
    with pytest.raises(DivergenceError) as info:
        fixed_point_reconstruct(g.full(1e-3), bc, cfg, mask)
    assert len(info.value.trace) == 4
    step = iter(range(1, 100))
    _, trace = fixed_point_reconstruct(g.full(1e-3), bc, cfg, mask, raise_on_divergence=False)
    assert len(trace) == cfg.max_iters


def test_stability_probe(small_loop, rng):
    g, a, mask, psi, bc, cfg, rec, trace = small_loop
    assert stability_probe(psi, g.zeros(), bc, cfg, mask) == 0.0
    X, Y = g.coords()
    scale = np.abs(psi.values).max()
    inside = mask.inside

    def delta(k, amp):
        c = rng.uniform([0.6, 0.35], [1.0, 0.65]) if k else np.array([0.85, 0.5])
        bump = np.exp(-((X - c[0]) ** 2 + (Y - c[1]) ** 2) / (2 * 0.05**2))
        return g.field(np.where(inside, amp * scale * bump, 0.0))

    r1 = stability_probe(psi, delta(0, 0.05), bc, cfg, mask)
    r2 = stability_probe(psi, delta(0, 0.025), bc, cfg, mask)
    assert 0.5 <= r1 / r2 <= 2.0
    ratios = [stability_probe(psi, delta(k + 1, 0.05), bc, cfg, mask) for k in range(5)]
    assert max(ratios) <= 10 * min(ratios)
