"""Krylov solvers used by the elliptic and tomographic stages."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap or stagnated.

    ``residual`` is the last relative residual and ``history`` the recorded
    residual sequence.
    """

    def __init__(self, message: str, residual: float = float("nan"), history=None):
        super().__init__(message)
        self.residual = residual
        self.history = list(history or [])


@dataclass
class SolveInfo:
    iterations: int
    residual: float
    history: List[float] = field(default_factory=list)


def pcg(
    A,
    b: np.ndarray,
    x0: Optional[np.ndarray] = None,
    precond: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    tol: float = 1e-10,
    maxiter: int = 10_000,
):
    """Preconditioned conjugate gradients for a symmetric positive-definite ``A``.

    Stops when ``||b - A x|| <= tol * ||b||``.  The true residual is
    recomputed every 50 iterations to stop round-off drift.  Returns
    ``(x, SolveInfo)``; raises :class:`ConvergenceError` on the iteration cap.
    """
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        return np.zeros_like(b), SolveInfo(0, 0.0, [0.0])
    if precond is None:
        precond = lambda r: r  # noqa: E731
    r = b - A @ x
    rel = np.linalg.norm(r) / bnorm
    history = [rel]
    if rel <= tol:
        return x, SolveInfo(0, rel, history)
    z = precond(r)
    p = z.copy()
    rz = float(r @ z)
    for it in range(1, maxiter + 1):
        q = A @ p
        alpha = rz / float(p @ q)
        x += alpha * p
        if it % 50 == 0:
            r = b - A @ x
        else:
            r -= alpha * q
        rel = np.linalg.norm(r) / bnorm
        history.append(rel)
        if rel <= tol:
            # confirm against the true residual before returning
            r = b - A @ x
            rel = np.linalg.norm(r) / bnorm
            history[-1] = rel
            if rel <= tol:
                return x, SolveInfo(it, rel, history)
        z = precond(r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(f"PCG did not reach tol={tol:g} in {maxiter} iterations (residual {rel:.3e})", rel, history)


def jacobi(A) -> Callable[[np.ndarray], np.ndarray]:
    inv = 1.0 / A.diagonal()
    return lambda r: inv * r


def cgls(
    apply_A: Callable[[np.ndarray], np.ndarray],
    apply_AT: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    n: int,
    tol: float = 1e-6,
    maxiter: int = 500,
    stall_window: int = 50,
    stall_factor: float = 0.999,
):
    """Conjugate gradients on the normal equations ``A^T A x = A^T b``.

    Converged when ``||A^T r|| <= tol * ||A^T b||``.  The normal residual is
    not monotone in CGLS, so stagnation is judged on its running minimum:
    if the best value of the last ``stall_window`` iterations is not below
    ``stall_factor`` times the best value before them,
    :class:`ConvergenceError` is raised.
    Hitting ``maxiter`` is accepted (early stopping is itself a regulariser)
    and recorded in the returned info.
    """
    x = np.zeros(n)
    r = np.array(b, dtype=float)
    s = apply_AT(r)
    snorm0 = np.linalg.norm(s)
    if snorm0 == 0.0:
        return x, SolveInfo(0, 0.0, [0.0])
    p = s.copy()
    gamma = float(s @ s)
    history = [1.0]
    for it in range(1, maxiter + 1):
        q = apply_A(p)
        qq = float(q @ q)
        if qq == 0.0:
            break
        alpha = gamma / qq
        x += alpha * p
        r -= alpha * q
        s = apply_AT(r)
        gamma_new = float(s @ s)
        rel = np.sqrt(gamma_new) / snorm0
        history.append(rel)
        if rel <= tol:
            return x, SolveInfo(it, rel, history)
        if it > stall_window and min(history[-stall_window:]) > stall_factor * min(history[:-stall_window]):
            raise ConvergenceError(f"CGLS stagnated at normal residual {rel:.3e} after {it} iterations", rel, history)
        p = s + (gamma_new / gamma) * p
        gamma = gamma_new
    return x, SolveInfo(len(history) - 1, history[-1], history)
