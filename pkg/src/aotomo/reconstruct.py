"""Absorption recovery from internal data by a truncated fixed-point iteration.

Writing ``a = a0 + Psi/phi^2 + at`` turns the internal-data relation into
the divergence-form problem ``div(phi^2 grad at) = div(2 Psi grad log phi)``
in ``D``.  Each iteration solves the fluence for the current absorption,
solves that problem for ``at`` and clamps the new absorption to the
admissible bounds.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AdmissibilityError, ConvergenceError, DivergenceError
from .fluence import BoundaryData, solve_fluence
from .grid import ScalarField, SubdomainMask, l2_norm
from .helmholtz import face_phi2

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReconstructConfig:
    a_lower: float = 1.0
    a_upper: float = 1.98
    a0: float = 1.0
    max_iters: int = 10
    fp_tol: float = 1e-6
    elliptic_tol: float = 1e-10
    fluence_tol: float = 1e-10
    boundary_mode: str = "numeric"

    def __post_init__(self):
        if not (0 < self.a_lower <= self.a0 <= self.a_upper):
            raise AdmissibilityError(
                f"need 0 < a_lower <= a0 <= a_upper, got {self.a_lower}, {self.a0}, {self.a_upper}"
            )
        if self.boundary_mode not in ("numeric", "theory"):
            raise AdmissibilityError(f"unknown boundary_mode {self.boundary_mode!r}")
        if self.max_iters < 1:
            raise AdmissibilityError("max_iters must be at least 1")


@dataclass
class FixedPointTrace:
    diff_l2: List[float] = field(default_factory=list)
    phi_min: List[float] = field(default_factory=list)
    phi_max: List[float] = field(default_factory=list)
    residual: List[float] = field(default_factory=list)

    def __len__(self):
        return len(self.diff_l2)

    def append(self, diff, phi_min, phi_max, residual):
        self.diff_l2.append(float(diff))
        self.phi_min.append(float(phi_min))
        self.phi_max.append(float(phi_max))
        self.residual.append(float(residual))

    def rows(self):
        for k in range(len(self)):
            yield (k + 1, self.diff_l2[k], self.phi_min[k], self.phi_max[k], self.residual[k])

    def contraction_ratios(self) -> np.ndarray:
        d = np.asarray(self.diff_l2)
        with np.errstate(divide="ignore", invalid="ignore"):
            return d[1:] / d[:-1]


def truncate(a, cfg: ReconstructConfig) -> ScalarField:
    """Pointwise clamp to ``[a_lower, a_upper]``."""
    f = a.field if hasattr(a, "field") else a
    return f.with_values(np.clip(f.values, cfg.a_lower, cfg.a_upper))


def _mask_parts(mask):
    inside = mask.inside if isinstance(mask, SubdomainMask) else np.asarray(mask, dtype=bool)
    outside = np.pad(~inside, 1, constant_values=True)
    touch = outside[:-2, 1:-1] | outside[2:, 1:-1] | outside[1:-1, :-2] | outside[1:-1, 2:]
    boundary = inside & touch
    return inside, boundary, inside & ~boundary


def _face_flux(phi2: np.ndarray, psi: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Flux of ``2 Psi grad log phi`` across faces, written so that it equals ``D Psi - phi2_f D(Psi/phi2)``."""
    if axis == 1:
        p0, p1, s0, s1 = phi2[:, :-1], phi2[:, 1:], psi[:, :-1], psi[:, 1:]
    else:
        p0, p1, s0, s1 = phi2[:-1, :], phi2[1:, :], psi[:-1, :], psi[1:, :]
    return (s0 + s1) * (p1 - p0) / (h * (p1 + p0))


def elliptic_tilde_solve(phi, psi, mask, cfg: ReconstructConfig, return_residual: bool = False):
    """Solve ``div(phi^2 grad at) = div(2 Psi grad log phi)`` on the mask.

    Finite volumes on the mask interior with harmonic-mean face values of
    ``phi^2``; the right side enters as face fluxes so ``Psi`` is never
    differentiated on its own.  Dirichlet data on the mask boundary nodes:
    ``0`` in ``theory`` mode, ``-Psi/phi^2`` in ``numeric`` mode.  ``at``
    is zero outside the mask.
    """
    pv = phi.values if isinstance(phi, ScalarField) else np.asarray(phi)
    sv = psi.values if isinstance(psi, ScalarField) else np.asarray(psi)
    grid = (phi if isinstance(phi, ScalarField) else psi).grid
    inside, bnd, inner = _mask_parts(mask)
    if not pv[inside].min() > 0:
        raise AdmissibilityError(f"fluence must be positive on D, min is {pv[inside].min():g}")
    phi2 = pv**2
    dirichlet = np.zeros(grid.shape)
    if cfg.boundary_mode == "numeric":
        dirichlet[bnd] = -sv[bnd] / phi2[bnd]
    at = np.zeros(grid.shape)
    at[bnd] = dirichlet[bnd]
    if not np.any(sv[inside]) and not np.any(dirichlet):
        return (ScalarField(grid, at), 0.0) if return_residual else ScalarField(grid, at)

    hx, hy = grid.hx, grid.hy
    fx, fy = face_phi2(pv)
    qx = _face_flux(phi2, sv, 1, hx)
    qy = _face_flux(phi2, sv, 0, hy)
    nodes = np.flatnonzero(inner.ravel())
    col = np.full(grid.size, -1, dtype=np.int64)
    col[nodes] = np.arange(nodes.size)
    idx = np.arange(grid.size).reshape(grid.shape)
    rows, cols, vals = [], [], []
    diag = np.zeros(nodes.size)
    rhs = np.zeros(nodes.size)
    d_flat = dirichlet.ravel()
    # horizontal faces (i, i+1) with transverse length hy, vertical faces with hx
    for a_idx, b_idx, coef, flux, t, h in (
        (idx[:, :-1], idx[:, 1:], fx[:, :-1], qx, hy, hx),
        (idx[:-1, :], idx[1:, :], fy[:-1, :], qy, hx, hy),
    ):
        a_idx, b_idx = a_idx.ravel(), b_idx.ravel()
        w = (coef * t / h).ravel()
        q = (flux * t).ravel()
        ca, cb = col[a_idx], col[b_idx]
        for c_self, c_other, other, sign in ((ca, cb, b_idx, -1.0), (cb, ca, a_idx, 1.0)):
            me = c_self >= 0
            np.add.at(diag, c_self[me], w[me])
            # -h^2 div_b q: the face (i, i+1) enters node i with -q and node i+1 with +q
            np.add.at(rhs, c_self[me], sign * q[me])
            both = me & (c_other >= 0)
            rows.append(c_self[both])
            cols.append(c_other[both])
            vals.append(-w[both])
            bd = me & (c_other < 0)
            np.add.at(rhs, c_self[bd], w[bd] * d_flat[other[bd]])
    n = nodes.size
    A = sp.coo_matrix(
        (np.concatenate(vals + [diag]), (np.concatenate(rows + [np.arange(n)]), np.concatenate(cols + [np.arange(n)]))),
        shape=(n, n),
    ).tocsc()
    sol = spla.splu(A).solve(rhs)
    res = np.linalg.norm(A @ sol - rhs) / max(np.linalg.norm(rhs), 1e-300)
    if not np.isfinite(res) or res > cfg.elliptic_tol:
        raise ConvergenceError(f"elliptic solve residual {res:.3e} exceeds tol {cfg.elliptic_tol:g}", res)
    at.ravel()[nodes] = sol
    out = ScalarField(grid, at)
    return (out, float(res)) if return_residual else out


def update_absorption(phi, psi, at, mask, cfg: ReconstructConfig) -> ScalarField:
    """``T[a0 + Psi/phi^2 + at]`` in the mask, ``a0`` outside."""
    inside = mask.inside if isinstance(mask, SubdomainMask) else np.asarray(mask, dtype=bool)
    pv = phi.values if isinstance(phi, ScalarField) else phi
    sv = psi.values if isinstance(psi, ScalarField) else psi
    grid = at.grid
    new = np.full(grid.shape, cfg.a0)
    new[inside] = cfg.a0 + sv[inside] / pv[inside] ** 2 + at.values[inside]
    return truncate(ScalarField(grid, new), cfg)


def fixed_point_reconstruct(psi: ScalarField, bc: BoundaryData, cfg: ReconstructConfig, mask,
                            a_init: Optional[ScalarField] = None, raise_on_divergence: bool = True):
    """Iterate ``a -> T[a0 + Psi/F[a]^2 + at]`` from ``a = a0``.

    Stops when the successive difference drops below ``fp_tol`` relative to
    the iterate, or after ``max_iters`` updates.  Three consecutive growths
    of the successive difference raise :class:`DivergenceError`.

    Returns
    -------
    a : ScalarField
    trace : FixedPointTrace
    """
    grid = psi.grid
    a = a_init if a_init is not None else grid.full(cfg.a0)
    trace = FixedPointTrace()
    growth = 0
    x0 = None
    for it in range(cfg.max_iters):
        sol = solve_fluence(a, bc, tol=cfg.fluence_tol, x0=x0)
        x0 = sol.phi.values.ravel()
        at, res = elliptic_tilde_solve(sol.phi, psi, mask, cfg, return_residual=True)
        a_new = update_absorption(sol.phi, psi, at, mask, cfg)
        diff = l2_norm(a_new - a, grid)
        trace.append(diff, sol.phi.min(), sol.phi.max(), res)
        log.info("fixed point %d: |a_n+1 - a_n| = %.3e", it + 1, diff)
        a = a_new
        if len(trace) >= 2 and diff > trace.diff_l2[-2]:
            growth += 1
        else:
            growth = 0
        if growth >= 3 and raise_on_divergence:
            raise DivergenceError(f"fixed-point iteration diverging after {it + 1} iterations", trace)
        if diff <= cfg.fp_tol * max(l2_norm(a, grid), 1e-300):
            break
    return a, trace


def stability_probe(psi: ScalarField, delta: ScalarField, bc: BoundaryData, cfg: ReconstructConfig, mask) -> float:
    """``||I[Psi] - I[Psi + delta]||_{L2(D)} / ||delta||_{L2(D)}`` with ``I`` the reconstruction map."""
    den = l2_norm(delta, psi.grid, mask)
    if den == 0.0:
        return 0.0
    a1, _ = fixed_point_reconstruct(psi, bc, cfg, mask)
    a2, _ = fixed_point_reconstruct(psi + delta, bc, cfg, mask)
    return l2_norm(a1 - a2, psi.grid, mask) / den
