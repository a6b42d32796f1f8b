"""Fourier-multiplier Helmholtz decomposition and one-variable kernel operators.

The decomposition is exact for the staggered difference calculus used in
the rest of the package.  On a periodic padded grid a vector field ``U``
splits as ``U = D_f psi + curl_b g + m``, where ``D_f`` is the forward
difference gradient, ``curl_b g = (-D_y^b g, D_x^b g)`` the backward
difference perpendicular gradient and ``m`` the mean vector (the zero
frequency, which no periodic gradient or curl can carry).  The Fourier
symbols of ``D_f`` and of ``curl_b`` are orthogonal at every nonzero
frequency, so the split is unique and L2-orthogonal, and
``div_b U = lap_5 psi`` holds exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import AdmissibilityError
from .grid import Grid, ScalarField, SubdomainMask, VectorField, face_harmonic_mean
from .sphericalmeans import harmonic_correction


def _next_pow2(n: int) -> int:
    return 1 << int(np.ceil(np.log2(max(n, 1))))


class SpectralWorkspace:
    """Padded periodic grid and forward-difference symbols for a field grid.

    The padded size is the next power of two of at least twice each
    dimension, so a compactly supported field never wraps onto itself.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        self.py = _next_pow2(2 * grid.ny)
        self.px = _next_pow2(2 * grid.nx)
        kx = 2 * np.pi * np.fft.fftfreq(self.px)
        ky = 2 * np.pi * np.fft.fftfreq(self.py)
        # forward-difference symbols (e^{i k} - 1)/h
        self.fx = ((np.exp(1j * kx) - 1.0) / grid.hx)[None, :]
        self.fy = ((np.exp(1j * ky) - 1.0) / grid.hy)[:, None]
        self.abs2 = np.abs(self.fx) ** 2 + np.abs(self.fy) ** 2
        self.abs2[0, 0] = 1.0  # zero mode handled separately

    def pad(self, values: np.ndarray) -> np.ndarray:
        out = np.zeros((self.py, self.px))
        out[: self.grid.ny, : self.grid.nx] = values
        return out

    def crop(self, values: np.ndarray) -> np.ndarray:
        return values[: self.grid.ny, : self.grid.nx]

    def grad_f(self, p: np.ndarray):
        P = np.fft.fft2(p)
        return np.fft.ifft2(self.fx * P).real, np.fft.ifft2(self.fy * P).real

    def curl_b(self, g: np.ndarray):
        G = np.fft.fft2(g)
        return np.fft.ifft2(np.conj(self.fy) * G).real, np.fft.ifft2(-np.conj(self.fx) * G).real


@dataclass(eq=False)
class HelmholtzParts:
    """Result of :func:`helmholtz_decompose`.

    ``psi`` and ``g_curl`` are cropped to the field grid; the padded arrays
    and the mean vector allow exact recomposition.  Unpacks as
    ``psi, g_curl = helmholtz_decompose(U)``.
    """

    psi: ScalarField
    g_curl: ScalarField
    mean: np.ndarray
    psi_padded: np.ndarray
    g_padded: np.ndarray
    workspace: SpectralWorkspace

    def __iter__(self) -> Iterator[ScalarField]:
        return iter((self.psi, self.g_curl))

    def gradient_part(self):
        """``D_f psi`` as padded ``(ux, uy)`` arrays."""
        return self.workspace.grad_f(self.psi_padded)

    def curl_part(self):
        return self.workspace.curl_b(self.g_padded)


def _check_collar(U: VectorField, collar: int) -> None:
    for comp in (U.ux, U.uy):
        inner = np.zeros(comp.shape, dtype=bool)
        inner[collar:-collar, collar:-collar] = True
        if np.any(comp[~inner] != 0):
            raise AdmissibilityError(f"vector field must vanish on a {collar}-node boundary collar")


def helmholtz_decompose(U: VectorField, collar: int = 4, workspace: Optional[SpectralWorkspace] = None) -> HelmholtzParts:
    """Split a compactly supported field into gradient, perpendicular-gradient and mean parts.

    ``psi`` and ``g_curl`` carry zero mean on the padded grid.
    """
    _check_collar(U, collar)
    ws = workspace or SpectralWorkspace(U.grid)
    Ux = np.fft.fft2(ws.pad(U.ux))
    Uy = np.fft.fft2(ws.pad(U.uy))
    n = ws.px * ws.py
    mean = np.array([Ux[0, 0].real, Uy[0, 0].real]) / n
    P = (Ux * np.conj(ws.fx) + Uy * np.conj(ws.fy)) / ws.abs2
    # curl symbol q = (conj fy, -conj fx); projection uses conj(q)
    Gc = (Ux * ws.fy - Uy * ws.fx) / ws.abs2
    P[0, 0] = 0.0
    Gc[0, 0] = 0.0
    psi = np.fft.ifft2(P).real
    g = np.fft.ifft2(Gc).real
    return HelmholtzParts(
        ScalarField(U.grid, ws.crop(psi)), ScalarField(U.grid, ws.crop(g)), mean, psi, g, ws
    )


def helmholtz_compose(parts: HelmholtzParts) -> VectorField:
    """``D_f psi + curl_b g + mean`` cropped to the field grid."""
    ws = parts.workspace
    gx, gy = parts.gradient_part()
    cx, cy = parts.curl_part()
    return VectorField(ws.grid, ws.crop(gx + cx) + parts.mean[0], ws.crop(gy + cy) + parts.mean[1])


def face_phi2(phi) -> tuple:
    """Harmonic mean of ``phi^2`` on horizontal and vertical edges (padded to grid shape)."""
    return face_harmonic_mean((phi.values if isinstance(phi, ScalarField) else np.asarray(phi)) ** 2)


def weighted_jump_field(a, phi) -> VectorField:
    """Edge field ``phi_f^2 * D_f a`` (forward differences, harmonic-mean faces)."""
    f = a.field if hasattr(a, "field") else a
    g = f.grid
    fx, fy = face_phi2(phi)
    ux = np.zeros(g.shape)
    uy = np.zeros(g.shape)
    ux[:, :-1] = fx[:, :-1] * np.diff(f.values, axis=1) / g.hx
    uy[:-1, :] = fy[:-1, :] * np.diff(f.values, axis=0) / g.hy
    return VectorField(g, ux, uy, layout="edge")


def ground_truth_internal_data(a, phi, mask: Optional[SubdomainMask] = None, collar: int = 4) -> ScalarField:
    """Internal data ``Psi`` of an absorption: gradient potential of ``phi^2 Da`` with zero trace on the mask boundary.

    ``mask`` defaults to the support disc of the phantom spec.
    """
    f = a.field if hasattr(a, "field") else a
    if mask is None:
        mask = a.spec.support_mask(f.grid)
    U = weighted_jump_field(f, phi)
    parts = helmholtz_decompose(U, collar=collar)
    return harmonic_correction(parts.psi, mask)


def mollify(values: np.ndarray, h: float, eta: float, wave=None, axis: int = 0) -> np.ndarray:
    """Periodic convolution with ``w_eta`` along one axis.

    The sampled kernel is renormalised to unit discrete mass, so constants
    are reproduced exactly.
    """
    from .acoustics import WaveShape

    wave = wave or WaveShape()
    n = values.shape[axis]
    t = h * np.fft.fftfreq(n, d=1.0 / n)  # signed offsets 0, h, ..., -h
    k = wave.kernel(t, eta)
    k = k / k.sum()
    K = np.fft.fft(k)
    shape = [1] * values.ndim
    shape[axis] = n
    return np.fft.ifft(np.fft.fft(values, axis=axis) * K.reshape(shape), axis=axis).real


def _sobolev_norm(values: np.ndarray, hs: Sequence[float], alpha: float) -> float:
    F = np.fft.fftn(values)
    weight = np.ones(values.shape)
    for ax, (n, h) in enumerate(zip(values.shape, hs)):
        k = 2 * np.pi * np.fft.fftfreq(n, d=h)
        shape = [1] * values.ndim
        shape[ax] = n
        weight = weight + (k**2).reshape(shape)
    cell = float(np.prod(hs))
    return float(np.sqrt(np.sum(np.abs(F) ** 2 * weight**alpha) * cell / values.size))


def rate_test_function(beta: float, alpha: float, n1: int = 4096, n2: int = 64):
    """Periodic test function on ``[-1, 1)^2`` with about ``alpha + beta`` Sobolev smoothness in ``x1``.

    ``beta = inf`` gives a Gaussian.  Otherwise the profile is
    ``|x1|^gamma`` with ``gamma = alpha + beta - 1/2`` (a jump when
    ``gamma = 0``), times a Gaussian window.
    """
    x1 = -1 + 2 * np.arange(n1) / n1
    x2 = -1 + 2 * np.arange(n2) / n2
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    window = np.exp(-(X1**2 + X2**2) / (2 * 0.15**2))
    if np.isinf(beta):
        f = np.exp(-((X1 - 0.1) ** 2 + X2**2) / (2 * 0.1**2))
    else:
        gamma = alpha + beta - 0.5
        f = (np.sign(X1) if gamma == 0 else np.abs(X1) ** gamma) * window
    return f, (2.0 / n1, 2.0 / n2)


def mollifier_rate_check(alpha: float = 1.0, beta: float = np.inf, etas=(0.04, 0.02, 0.01, 0.005)) -> float:
    """Log-log slope of ``||T_eta f - f||_{H^alpha}`` against ``eta`` for a test function of extra smoothness ``beta``."""
    f, hs = rate_test_function(beta, alpha)
    errs = [_sobolev_norm(mollify(f, hs[0], eta, axis=0) - f, hs, alpha) for eta in etas]
    return float(np.polyfit(np.log(etas), np.log(errs), 1)[0])


def kernel_operator_apply(theta: np.ndarray, f: np.ndarray, dt: float) -> np.ndarray:
    """``T[f](x1, x~) = sum_t f(t, x~) theta(t, x1) dt`` for ``f`` of shape ``(n_t, ...)`` and ``theta`` of shape ``(n_t, n_1)``."""
    return np.tensordot(theta, f, axes=([0], [0])) * dt


def kernel_operator_bound_check(n_trials: int = 100, n: int = 48, seed: int = 0) -> float:
    """Largest ``||T f|| / (||theta|| ||f||)`` over random kernels and functions on a periodic grid."""
    rng = np.random.default_rng(seed)
    h = 1.0 / n
    worst = 0.0
    for _ in range(n_trials):
        theta = rng.standard_normal((n, n))
        f = rng.standard_normal((n, n))
        Tf = kernel_operator_apply(theta, f, h)
        ratio = np.sqrt(np.sum(Tf**2) * h * h) / (np.sqrt(np.sum(theta**2) * h * h) * np.sqrt(np.sum(f**2) * h * h))
        worst = max(worst, float(ratio))
    return worst
