import numpy as np
import pytest

from aotomo.errors import AdmissibilityError
from aotomo.fluence import (
    BoundaryData,
    FluenceFactor,
    fluence_lipschitz_probe,
    solve_fluence,
    system_matrix,
)
from aotomo.grid import Grid, l2_norm
from aotomo.phantom import disc_phantom, rasterize


def manufactured_error(n, k=1.0, l=0.1):
    g = Grid(*n)
    bc = BoundaryData.from_function(g, l, lambda x, y, nx, ny: (l * k * nx + 1) * np.exp(k * x))
    phi = solve_fluence(g.full(k * k), bc).phi
    exact = g.sample(lambda X, Y: np.exp(k * X))
    return l2_norm(phi - exact, g) / l2_norm(exact, g)


def test_manufactured_exponential():
    coarse, fine = manufactured_error((128, 80)), manufactured_error((256, 160))
    assert fine <= 1e-3
    assert np.log2(coarse / fine) >= 1.9


def test_maximum_principle(small_grid, bc):
    phi = solve_fluence(small_grid.full(1.0), bc).phi
    assert phi.min() > 0 and phi.max() <= 1.0


def test_monotone_in_absorption(small_grid, bc):
    lo = solve_fluence(small_grid.full(1.0), bc).phi.values
    hi = solve_fluence(small_grid.full(1.5), bc).phi.values
    assert np.all(hi <= lo)


def test_residual_contract(small_grid, bc):
    a = rasterize(disc_phantom(), small_grid)
    sol = solve_fluence(a, bc, tol=1e-10)
    K = system_matrix(a.values, bc, small_grid)
    b = bc.load(small_grid).ravel()
    assert np.linalg.norm(K @ sol.phi.values.ravel() - b) / np.linalg.norm(b) <= 1e-10


def test_rejects_nonpositive(small_grid, bc):
    with pytest.raises(AdmissibilityError):
        solve_fluence(small_grid.full(0.0), bc)
    with pytest.raises(AdmissibilityError):
        BoundaryData(0.0, 1.0)
    with pytest.raises(AdmissibilityError):
        BoundaryData(0.1, 0.0)


def test_system_matrix_symmetric(small_grid, bc):
    K = system_matrix(np.full(small_grid.shape, 1.2), bc, small_grid)
    assert abs(K - K.T).max() < 1e-12


def test_factor_correction_matches_direct_solve(bc):
    g = Grid(48, 30)
    a = rasterize(disc_phantom(), g).field
    fac = FluenceFactor(a, bc)
    phi = fac.solve()
    b = a.values.copy()
    b[10:14, 20:24] += 0.3
    direct = solve_fluence(g.field(b), bc, tol=1e-12).phi.values.ravel() - phi
    np.testing.assert_allclose(fac.correction(b, phi).ravel(), direct, atol=1e-10)


def test_lipschitz_probe(bc, rng):
    g = Grid(64, 40)
    a = g.full(1.0)
    assert fluence_lipschitz_probe(a, a, bc) == 0.0
    X, Y = g.coords()
    bump = np.exp(-((X - 0.8) ** 2 + (Y - 0.5) ** 2) / 0.01)
    r1 = fluence_lipschitz_probe(a, g.field(1 + 0.2 * bump), bc)
    r2 = fluence_lipschitz_probe(a, g.field(1 + 0.1 * bump), bc)
    assert 0.8 <= r1 / r2 <= 1.2
    ratios = []
    for _ in range(10):
        c = rng.uniform([0.5, 0.3], [1.1, 0.7])
        disc = (X - c[0]) ** 2 + (Y - c[1]) ** 2 < rng.uniform(0.05, 0.15) ** 2
        ratios.append(fluence_lipschitz_probe(a, g.field(1 + rng.uniform(0.1, 0.9) * disc), bc))
    assert max(ratios) / min(ratios) <= 5
