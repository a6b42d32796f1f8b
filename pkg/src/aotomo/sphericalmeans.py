"""Circular means transform, its flow variant, regularised inversion and the harmonic correction.

``R[f](y, r)`` integrates ``f`` over the circle of centre ``y`` and radius
``r`` against the angle (so ``R[1] = 2*pi``); ``Rv[F](y, r)`` integrates the
radial component ``F . xi``.  Both are discretised as sparse matrices:
``n_theta`` equally spaced angles, bilinear sampling, samples falling
outside the grid contribute nothing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .acoustics import AcousticConfig, Sinogram, edge_jumps, measure_ideal, p_transform
from .errors import ConvergenceError, GridMismatchError
from .grid import Grid, ScalarField, SubdomainMask, VectorField, face_harmonic_mean, gradient, laplacian
from .linalg import SolveInfo, cgls

log = logging.getLogger(__name__)


class RadonOperator:
    """Sparse circular means operator on ``grid`` for the given centres and radii.

    Parameters
    ----------
    grid : Grid
    centers : (n_c, 2) array
    radii : (n_r,) array
    n_theta : int
        Angular samples per circle.
    support : SubdomainMask or bool array, optional
        Restrict the unknowns to these nodes.  Fields are then assumed to
        vanish elsewhere.
    """

    def __init__(self, grid: Grid, centers, radii, n_theta: int = 720, support=None):
        self.grid = grid
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        self.radii = np.asarray(radii, dtype=float)
        self.n_theta = int(n_theta)
        if support is None:
            cols = np.ones(grid.shape, dtype=bool)
        else:
            cols = support.inside if isinstance(support, SubdomainMask) else np.asarray(support, dtype=bool)
        self.support = cols
        self.col_nodes = np.flatnonzero(cols.ravel())
        self._col_of = np.full(grid.size, -1, dtype=np.int64)
        self._col_of[self.col_nodes] = np.arange(self.col_nodes.size)
        self.theta = 2 * np.pi * np.arange(self.n_theta) / self.n_theta
        self.dtheta = 2 * np.pi / self.n_theta
        self.matrix = self._assemble(np.ones(self.n_theta))
        self._flow = None

    @classmethod
    def from_config(cls, grid: Grid, cfg: AcousticConfig, n_theta: int = 720, support=None):
        return cls(grid, cfg.centers, cfg.radii, n_theta, support)

    @property
    def shape(self):
        return (len(self.centers), len(self.radii))

    def _assemble(self, angular_weight: np.ndarray) -> sp.csr_matrix:
        g = self.grid
        nr = len(self.radii)
        ct, st = np.cos(self.theta), np.sin(self.theta)
        blocks = []
        for k, y in enumerate(self.centers):
            px = y[0] + self.radii[:, None] * ct[None, :]
            py = y[1] + self.radii[:, None] * st[None, :]
            fx = (px - g.x0) / g.hx
            fy = (py - g.y0) / g.hy
            ok = (fx >= 0) & (fx <= g.nx - 1) & (fy >= 0) & (fy <= g.ny - 1)
            i0 = np.clip(np.floor(fx).astype(np.int64), 0, g.nx - 2)
            j0 = np.clip(np.floor(fy).astype(np.int64), 0, g.ny - 2)
            tx = fx - i0
            ty = fy - j0
            w = self.dtheta * angular_weight[None, :] * ok
            rows = np.broadcast_to(k * nr + np.arange(nr)[:, None], px.shape)
            for di, dj, wc in (
                (0, 0, (1 - tx) * (1 - ty)),
                (1, 0, tx * (1 - ty)),
                (0, 1, (1 - tx) * ty),
                (1, 1, tx * ty),
            ):
                node = (j0 + dj) * g.nx + (i0 + di)
                col = self._col_of[node]
                val = w * wc
                keep = (col >= 0) & (val != 0)
                blocks.append((rows[keep], col[keep], val[keep]))
        r = np.concatenate([b[0] for b in blocks])
        c = np.concatenate([b[1] for b in blocks])
        v = np.concatenate([b[2] for b in blocks])
        n_rows = len(self.centers) * nr
        return sp.coo_matrix((v, (r, c)), shape=(n_rows, self.col_nodes.size)).tocsr()

    def restrict(self, values) -> np.ndarray:
        return np.asarray(values, dtype=float).ravel()[self.col_nodes]

    def extend(self, x) -> np.ndarray:
        out = np.zeros(self.grid.size)
        out[self.col_nodes] = x
        return out.reshape(self.grid.shape)

    def apply(self, f) -> Sinogram:
        v = f.values if isinstance(f, ScalarField) else f
        _check_grid(self.grid, f)
        return Sinogram(self.centers, self.radii, (self.matrix @ self.restrict(v)).reshape(self.shape))

    def adjoint(self, s) -> ScalarField:
        """Transpose of the assembled matrix (plain sums, no quadrature weights)."""
        vals = s.values if isinstance(s, Sinogram) else np.asarray(s)
        if vals.shape != self.shape:
            raise GridMismatchError(f"sinogram shape {vals.shape} does not match operator {self.shape}")
        return ScalarField(self.grid, self.extend(self.matrix.T @ vals.ravel()))

    def flow_matrices(self):
        if self._flow is None:
            self._flow = (self._assemble(np.cos(self.theta)), self._assemble(np.sin(self.theta)))
        return self._flow

    def flow(self, F: VectorField) -> Sinogram:
        _check_grid(self.grid, F)
        if F.layout != "node":
            raise ValueError("flow transform expects a node-centred vector field")
        Mc, Ms = self.flow_matrices()
        vals = Mc @ self.restrict(F.ux) + Ms @ self.restrict(F.uy)
        return Sinogram(self.centers, self.radii, vals.reshape(self.shape))


def _check_grid(grid, obj):
    g = getattr(obj, "grid", grid)
    if g != grid:
        raise GridMismatchError(f"field grid {g} differs from operator grid {grid}")


def radon_apply(f, op: RadonOperator) -> Sinogram:
    return op.apply(f)


def flow_apply(F: VectorField, op: RadonOperator) -> Sinogram:
    return op.flow(F)


def _d_dr(values: np.ndarray, radii: np.ndarray) -> np.ndarray:
    return np.gradient(values, radii, axis=1, edge_order=2)


def _rel_l2(a: np.ndarray, b: np.ndarray) -> float:
    den = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / den) if den > 0 else float(np.linalg.norm(a - b))


def flow_gradient_identity_check(u: ScalarField, op: RadonOperator) -> float:
    """Relative discrepancy between ``Rv[grad u]`` and ``d/dr R[u]``."""
    lhs = op.flow(gradient(u)).values
    rhs = _d_dr(op.apply(u).values, op.radii)
    if not np.any(lhs) and not np.any(rhs):
        return 0.0
    return _rel_l2(lhs, rhs)


def radon_laplacian_identity_check(u: ScalarField, op: RadonOperator) -> float:
    """Relative discrepancy between ``R[lap u]`` and ``(1/r) d/dr (r d/dr R[u])``.

    The left side uses the 5-point Laplacian, the right side second-order
    finite differences in ``r``; ``op.radii`` should be uniformly spaced.
    """
    lhs = op.apply(laplacian(u)).values
    r = op.radii
    rhs = _d_dr(r[None, :] * _d_dr(op.apply(u).values, r), r) / r[None, :]
    if not np.any(lhs) and not np.any(rhs):
        return 0.0
    return _rel_l2(lhs, rhs)


def edge_flux_field(a, phi) -> VectorField:
    """Node field carrying ``phi^2 Da``: each edge jump, weighted by the harmonic mean of ``phi^2``, is split between its end nodes.

    Summing the result against the trapezoid cell areas reproduces the edge
    measure used by :func:`aotomo.acoustics.measure_ideal`.
    """
    f = a.field if hasattr(a, "field") else a
    g = f.grid
    phi2 = (phi.values if isinstance(phi, ScalarField) else np.asarray(phi)) ** 2
    fx, fy = face_harmonic_mean(phi2)
    jx, jy = edge_jumps(f)
    ex = jx * fx[:, :-1] / g.hx
    ey = jy * fy[:-1, :] / g.hy
    ux = np.zeros(g.shape)
    uy = np.zeros(g.shape)
    ux[:, :-1] += 0.5 * ex
    ux[:, 1:] += 0.5 * ex
    uy[:-1, :] += 0.5 * ey
    uy[1:, :] += 0.5 * ey
    return VectorField(g, ux, uy)


def _chunked(evaluate, grid, centers, rho, n_theta, max_samples=4_000_000):
    """Evaluate a transform on a fine radial lattice a few centres at a time to bound memory."""
    per_center = max(len(rho) * n_theta, 1)
    step = max(1, max_samples // per_center)
    parts = [evaluate(RadonOperator(grid, centers[k:k + step], rho, n_theta)) for k in range(0, len(centers), step)]
    return np.vstack(parts)


def convolution_identity_check(a, phi, cfg: AcousticConfig, n_theta: int = 720, oversample: int = 10) -> float:
    """Compare the ideal measurement with ``-(1/r) [(r Rv[phi^2 Da]) * w_eta(-.)]``.

    The left side is the direct edge sum of :func:`measure_ideal`; the right
    side samples the flow transform of :func:`edge_flux_field` on a radial
    lattice ``oversample`` times finer than ``eta`` and convolves in ``r``.
    Returns the relative L2 discrepancy over the sweep.
    """
    f = a.field if hasattr(a, "field") else a
    lhs = np.array([[measure_ideal(f, phi, y, r, cfg) for r in cfg.radii] for y in cfg.centers])
    U = edge_flux_field(f, phi)
    eta = cfg.eta
    d_rho = eta / oversample
    rho = np.arange(max(cfg.radii[0] - eta, d_rho), cfg.radii[-1] + eta + d_rho, d_rho)
    flow = _chunked(lambda op: op.flow(U).values, f.grid, cfg.centers, rho, n_theta)
    kern = cfg.wave.kernel(rho[None, :] - cfg.radii[:, None], eta)
    wts = np.full(rho.size, d_rho)
    wts[[0, -1]] *= 0.5
    rhs = -(flow * rho[None, :] * wts[None, :]) @ kern.T / cfg.radii[None, :]
    if not np.any(lhs) and not np.any(rhs):
        return 0.0
    return _rel_l2(rhs, lhs)


def synthetic_ideal_measurement(Psi: ScalarField, cfg: AcousticConfig, n_theta: int = 720, oversample: int = 10) -> Sinogram:
    """``-(1/r) [(r d/dr R[Psi]) * w_eta]`` on the sweep lattice of ``cfg``."""
    eta = cfg.eta
    d_rho = eta / oversample
    rho = np.arange(max(cfg.radii[0] - eta, d_rho), cfg.radii[-1] + eta + d_rho, d_rho)
    dR = _d_dr(_chunked(lambda op: op.apply(Psi).values, Psi.grid, cfg.centers, rho, n_theta), rho)
    kern = cfg.wave.kernel(rho[None, :] - cfg.radii[:, None], eta)
    wts = np.full(rho.size, d_rho)
    wts[[0, -1]] *= 0.5
    vals = -(dR * rho[None, :] * wts[None, :]) @ kern.T / cfg.radii[None, :]
    return Sinogram(cfg.centers, cfg.radii, vals)


def gradient_matrix(grid: Grid, nodes: np.ndarray) -> sp.csr_matrix:
    """Forward-difference gradient of fields supported on ``nodes`` (extended by zero), one row per touching edge."""
    n = nodes.size
    col_of = np.full(grid.size, -1, dtype=np.int64)
    col_of[nodes] = np.arange(n)
    idx = np.arange(grid.size).reshape(grid.shape)
    rows, cols, vals = [], [], []
    row = 0
    for a_nodes, b_nodes, h in (
        (idx[:, :-1].ravel(), idx[:, 1:].ravel(), grid.hx),
        (idx[:-1, :].ravel(), idx[1:, :].ravel(), grid.hy),
    ):
        ca, cb = col_of[a_nodes], col_of[b_nodes]
        touch = (ca >= 0) | (cb >= 0)
        ca, cb = ca[touch], cb[touch]
        r = row + np.arange(ca.size)
        row += ca.size
        for c, s in ((ca, -1.0), (cb, 1.0)):
            keep = c >= 0
            rows.append(r[keep])
            cols.append(c[keep])
            vals.append(np.full(keep.sum(), s / h))
    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(row, n)
    ).tocsr()


@dataclass
class InversionResult:
    field: ScalarField
    info: SolveInfo
    lam: float
    offsets: Optional[np.ndarray] = None


def radon_invert(s: Sinogram, op: RadonOperator, reg: float = 1e-6, tol: float = 1e-8, maxiter: int = 1000,
                 return_info: bool = False, offsets: bool = False):
    """Least-squares inversion ``min ||R f - s||^2 + lam ||grad f||^2`` over fields supported on ``op.support``.

    ``lam = reg * mean(diag(R^T R))``, so ``reg`` is relative to the scale of
    the transform.  The stacked system is solved by CGLS after scaling every
    unknown by its column norm (a Jacobi preconditioner on the normal
    equations).  Stagnation raises :class:`ConvergenceError`.

    With ``offsets=True`` every centre also gets a free, unregularised
    additive constant: ``min ||R f + c_y - s||^2 + lam ||grad f||^2``.
    Data known only up to a function of the centre, such as the output of
    :func:`aotomo.acoustics.p_transform`, are then fitted without forcing
    that function into ``f``.
    """
    if s.values.shape != op.shape:
        raise GridMismatchError(f"sinogram shape {s.values.shape} does not match operator {op.shape}")
    if not (np.allclose(s.radii, op.radii) and np.allclose(s.centers, op.centers)):
        raise GridMismatchError("sinogram sampling differs from the operator's centres and radii")
    R = op.matrix
    G = gradient_matrix(op.grid, op.col_nodes)
    col_R = np.asarray(R.multiply(R).sum(axis=0)).ravel()
    lam = reg * col_R.mean()
    col = np.sqrt(col_R + lam * np.asarray(G.multiply(G).sum(axis=0)).ravel())
    col[col == 0] = 1.0
    top, bottom = R, np.sqrt(lam) * G
    n_f = R.shape[1]
    if offsets:
        n_c, n_r = op.shape
        E = sp.kron(sp.identity(n_c), np.ones((n_r, 1)), format="csr")
        top = sp.hstack([R, E])
        bottom = sp.hstack([bottom, sp.csr_matrix((G.shape[0], n_c))])
        col = np.concatenate([col, np.full(n_c, np.sqrt(n_r))])
    A = sp.vstack([top, bottom]).tocsr() @ sp.diags(1.0 / col)
    AT = A.T.tocsr()
    b = np.concatenate([s.values.ravel(), np.zeros(G.shape[0])])
    z, info = cgls(lambda v: A @ v, lambda v: AT @ v, b, A.shape[1], tol=tol, maxiter=maxiter, stall_window=100)
    x = z / col
    out = ScalarField(op.grid, op.extend(x[:n_f]))
    log.debug("radon_invert: %d iterations, normal residual %.2e", info.iterations, info.residual)
    if return_info:
        return InversionResult(out, info, lam, x[n_f:] if offsets else None)
    return out


def harmonic_correction(candidate: ScalarField, mask: SubdomainMask) -> ScalarField:
    """Add the harmonic function that cancels ``candidate`` on the mask boundary.

    ``h`` solves the 5-point Laplace equation on the mask interior with
    ``h = -candidate`` on the mask boundary nodes (those with a 4-neighbour
    outside).  Returns ``candidate + h`` on the mask, zero elsewhere.
    """
    g = candidate.grid
    inside = mask.inside if isinstance(mask, SubdomainMask) else np.asarray(mask, dtype=bool)
    bnd = _mask_boundary(inside)
    inner_nodes = inside & ~bnd
    c = np.where(inside, candidate.values, 0.0)
    out = np.zeros(g.shape)
    if not inner_nodes.any():
        return ScalarField(g, out)
    h_bnd = np.where(bnd, -c, 0.0)
    L, rhs_op = _dirichlet_laplacian(g, inner_nodes)
    rhs = -(rhs_op @ h_bnd.ravel())
    sol = spla.spsolve(L.tocsc(), rhs)
    res = np.linalg.norm(L @ sol - rhs)
    if not np.isfinite(res) or res > 1e-8 * max(np.linalg.norm(rhs), 1e-300):
        raise ConvergenceError(f"harmonic correction solve failed (residual {res:.3e})", res)
    h = h_bnd.copy().ravel()
    h[np.flatnonzero(inner_nodes.ravel())] = sol
    out = np.where(inside, c + h.reshape(g.shape), 0.0)
    out[bnd] = 0.0
    return ScalarField(g, out)


def _mask_boundary(inside: np.ndarray) -> np.ndarray:
    outside = np.pad(~inside, 1, constant_values=True)
    touch = outside[:-2, 1:-1] | outside[2:, 1:-1] | outside[1:-1, :-2] | outside[1:-1, 2:]
    return inside & touch


def _dirichlet_laplacian(g: Grid, unknown: np.ndarray):
    """5-point ``-lap`` on ``unknown`` nodes and the coupling to all other nodes."""
    nodes = np.flatnonzero(unknown.ravel())
    col_of = np.full(g.size, -1, dtype=np.int64)
    col_of[nodes] = np.arange(nodes.size)
    jj, ii = np.divmod(nodes, g.nx)
    diag = np.full(nodes.size, 2 / g.hx**2 + 2 / g.hy**2)
    rows_in, cols_in, vals_in = [np.arange(nodes.size)], [np.arange(nodes.size)], [diag]
    rows_out, cols_out, vals_out = [], [], []
    for di, dj, w in ((1, 0, g.hx), (-1, 0, g.hx), (0, 1, g.hy), (0, -1, g.hy)):
        nb = (jj + dj) * g.nx + (ii + di)
        c = col_of[nb]
        inner = c >= 0
        rows_in.append(np.flatnonzero(inner))
        cols_in.append(c[inner])
        vals_in.append(np.full(inner.sum(), -1 / w**2))
        rows_out.append(np.flatnonzero(~inner))
        cols_out.append(nb[~inner])
        vals_out.append(np.full((~inner).sum(), -1 / w**2))
    n = nodes.size
    L = sp.coo_matrix((np.concatenate(vals_in), (np.concatenate(rows_in), np.concatenate(cols_in))), shape=(n, n)).tocsr()
    C = sp.coo_matrix((np.concatenate(vals_out), (np.concatenate(rows_out), np.concatenate(cols_out))), shape=(n, g.size)).tocsr()
    return L, C


def internal_data(m: Sinogram, op: RadonOperator, reg: float = 1e-6, mask: SubdomainMask = None,
                  maxiter: int = 1000, offsets: bool = True) -> ScalarField:
    """``Psi ~ harmonic_correction(R^-1 P[m])`` on the support of ``op`` (or ``mask``).

    ``P[m]`` determines the circular means only up to a function of the
    centre, so by default the inversion fits one free constant per centre.
    """
    if not np.any(m.values):
        return op.grid.zeros()
    candidate = radon_invert(p_transform(m), op, reg=reg, maxiter=maxiter, offsets=offsets)
    return harmonic_correction(candidate, mask if mask is not None else op.support)
