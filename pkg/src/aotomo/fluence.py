"""Diffusion model for the light fluence with a Robin boundary condition.

The discrete problem is the finite-volume form of ``-lap(phi) + a*phi = 0``
with ``l * d(phi)/dn + phi = g``: every node owns its trapezoid cell, fluxes
cross cell faces with two-point differences and the Robin flux
``(g - phi) / l`` enters through the boundary faces.  This is the same system
a central ghost-node closure gives after scaling each row by its cell area,
it is second order, symmetric and an M-matrix for ``a > 0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AdmissibilityError, ConvergenceError
from .grid import Grid, ScalarField, h1_norm, l2_norm
from .linalg import jacobi, pcg

SIDES = ("left", "right", "bottom", "top")


@dataclass(frozen=True, eq=False)
class BoundaryData:
    """Extrapolation length ``l`` and illumination ``g``.

    ``g`` is either a constant or a mapping from side name (``left``,
    ``right``, ``bottom``, ``top``) to node values along that side, ordered
    by increasing coordinate.  Corner nodes carry one value per side they
    belong to.
    """

    l: float
    g: Union[float, Dict[str, np.ndarray]] = 1.0

    def __post_init__(self):
        if not self.l > 0:
            raise AdmissibilityError(f"extrapolation length l must be positive, got {self.l}")
        if isinstance(self.g, dict):
            missing = set(SIDES) - set(self.g)
            if missing:
                raise AdmissibilityError(f"illumination missing sides {sorted(missing)}")
            g = {s: np.array(self.g[s], dtype=float) for s in SIDES}
            vals = np.concatenate(list(g.values()))
            object.__setattr__(self, "g", g)
        else:
            vals = np.array([float(self.g)])
            object.__setattr__(self, "g", float(self.g))
        if not np.all(np.isfinite(vals)) or vals.min() < 0:
            raise AdmissibilityError("illumination g must be finite and non-negative")
        if not vals.max() > 0:
            raise AdmissibilityError("illumination g must not vanish identically")

    @classmethod
    def from_function(cls, grid: Grid, l: float, func) -> "BoundaryData":
        """Sample ``func(x, y, nx, ny)`` on each side, with ``(nx, ny)`` the outward unit normal."""
        x, y = grid.x, grid.y
        x_lo, x_hi = x[0], x[-1]
        y_lo, y_hi = y[0], y[-1]
        g = {
            "left": func(np.full_like(y, x_lo), y, -1.0, 0.0),
            "right": func(np.full_like(y, x_hi), y, 1.0, 0.0),
            "bottom": func(x, np.full_like(x, y_lo), 0.0, -1.0),
            "top": func(x, np.full_like(x, y_hi), 0.0, 1.0),
        }
        return cls(l, {s: np.broadcast_to(v, (grid.ny if s in ("left", "right") else grid.nx,)) for s, v in g.items()})

    def side_values(self, grid: Grid) -> Dict[str, np.ndarray]:
        if isinstance(self.g, float):
            return {s: np.full(grid.ny if s in ("left", "right") else grid.nx, self.g) for s in SIDES}
        for s in SIDES:
            n = grid.ny if s in ("left", "right") else grid.nx
            if self.g[s].shape != (n,):
                raise AdmissibilityError(f"illumination on side {s!r} has {self.g[s].size} values, grid needs {n}")
        return self.g

    @property
    def g_max(self) -> float:
        if isinstance(self.g, float):
            return self.g
        return float(max(v.max() for v in self.g.values()))

    def load(self, grid: Grid) -> np.ndarray:
        """Robin load ``(1/l) * sum_sides w_side * g_side`` on the nodes."""
        g = self.side_values(grid)
        hx, hy = grid.hx, grid.hy
        wy = np.full(grid.ny, hy)
        wy[[0, -1]] *= 0.5
        wx = np.full(grid.nx, hx)
        wx[[0, -1]] *= 0.5
        b = np.zeros(grid.shape)
        b[:, 0] += wy * g["left"]
        b[:, -1] += wy * g["right"]
        b[0, :] += wx * g["bottom"]
        b[-1, :] += wx * g["top"]
        return b / self.l


@dataclass(frozen=True, eq=False)
class FluenceSolution:
    phi: ScalarField
    residual_norm: float
    iterations: int


def stiffness_matrix(grid: Grid) -> sp.csr_matrix:
    """Finite-volume Neumann stiffness matrix of ``-lap`` with trapezoid cell faces."""
    nx, ny = grid.nx, grid.ny
    idx = np.arange(grid.size).reshape(grid.shape)
    # face lengths: halved along the outer boundary
    ty = np.full(ny, grid.hy)
    ty[[0, -1]] *= 0.5
    tx = np.full(nx, grid.hx)
    tx[[0, -1]] *= 0.5
    wh = np.repeat(ty, nx - 1) / grid.hx
    wv = np.tile(tx, ny - 1) / grid.hy
    i = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    j = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    w = np.concatenate([wh, wv])
    off = sp.coo_matrix((-w, (i, j)), shape=(grid.size, grid.size))
    off = off + off.T
    diag = -np.asarray(off.sum(axis=1)).ravel()
    return (off + sp.diags(diag)).tocsr()


def system_matrix(a, bc: BoundaryData, grid: Grid = None) -> sp.csr_matrix:
    """``S + diag(W a) + diag(B)/l``; the load vector is :meth:`BoundaryData.load`."""
    vals = _values(a)
    grid = grid or _grid(a)
    diag = grid.trapezoid_weights() * vals + grid.boundary_weights() / bc.l
    return (stiffness_matrix(grid) + sp.diags(diag.ravel())).tocsr()


def _values(a) -> np.ndarray:
    if hasattr(a, "field"):
        a = a.field
    return a.values if isinstance(a, ScalarField) else np.asarray(a, dtype=float)


def _grid(a) -> Grid:
    if hasattr(a, "field"):
        a = a.field
    return a.grid


def solve_fluence(a, bc: BoundaryData, tol: float = 1e-10, x0: Optional[np.ndarray] = None) -> FluenceSolution:
    """Solve the diffusion problem for absorption ``a`` (an ``AbsorptionField`` or ``ScalarField``).

    Raises
    ------
    AdmissibilityError
        if ``a`` is not strictly positive.
    ConvergenceError
        if PCG does not converge within ``50 * (nx + ny)`` iterations.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    grid = _grid(a)
    vals = _values(a)
    if not vals.min() > 0:
        raise AdmissibilityError(f"absorption must be positive, min is {vals.min():g}")
    K = system_matrix(vals, bc, grid)
    b = bc.load(grid).ravel()
    x, info = pcg(K, b, x0=x0, precond=jacobi(K), tol=tol, maxiter=50 * (grid.nx + grid.ny))
    phi = ScalarField(grid, x.reshape(grid.shape))
    check_maximum_principle(phi, bc)
    return FluenceSolution(phi, info.residual, info.iterations)


def check_maximum_principle(phi: ScalarField, bc: BoundaryData, slack: float = 1e-8) -> None:
    lo, hi = phi.min(), phi.max()
    if not lo > 0:
        raise ConvergenceError(f"fluence lost positivity (min {lo:g})", float("nan"))
    if hi > bc.g_max * (1 + slack):
        raise ConvergenceError(f"fluence exceeds max illumination ({hi:g} > {bc.g_max:g})", float("nan"))


class FluenceFactor:
    """Sparse LU factorisation of one system matrix, reused as a solver or preconditioner.

    :meth:`correction` handles absorptions that differ from the factored
    one on a few nodes: PCG on the perturbed matrix preconditioned by the
    factorisation converges in a handful of iterations.
    """

    def __init__(self, a, bc: BoundaryData, grid: Grid = None):
        self.grid = grid or _grid(a)
        self.a = _values(a).copy()
        self.bc = bc
        self.K = system_matrix(self.a, bc, self.grid)
        self.lu = spla.splu(self.K.tocsc())
        self.b = bc.load(self.grid).ravel()
        self.weights = self.grid.trapezoid_weights().ravel()

    def solve(self, rhs=None) -> np.ndarray:
        return self.lu.solve(self.b if rhs is None else np.asarray(rhs, dtype=float))

    def correction(self, a_new, phi: np.ndarray, tol: float = 1e-10) -> np.ndarray:
        """``F[a_new] - F[a]`` given ``phi = F[a]``, solved without cancellation."""
        da = (_values(a_new) - self.a).ravel() * self.weights
        rhs = -da * phi.ravel()
        if not np.any(rhs):
            return np.zeros(self.grid.shape)
        K_new = self.K + sp.diags(da)
        x, _ = pcg(K_new, rhs, precond=self.lu.solve, tol=tol, maxiter=500)
        return x.reshape(self.grid.shape)


def fluence_lipschitz_probe(a, a_perturbed, bc: BoundaryData, tol: float = 1e-10) -> float:
    """``||F[a] - F[a']||_H1 / ||a - a'||_L2`` with discrete norms (0 for identical inputs)."""
    grid = _grid(a)
    va, vb = _values(a), _values(a_perturbed)
    den = l2_norm(va - vb, grid)
    if den == 0.0:
        return 0.0
    fac = FluenceFactor(va, bc, grid)
    phi = fac.solve()
    diff = fac.correction(vb, phi, tol=tol)
    return h1_norm(ScalarField(grid, diff)) / den
