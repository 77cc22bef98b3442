"""Matrix-free preconditioned conjugate gradients with deterministic reductions."""

from __future__ import annotations

import numpy as np


class ConvergenceError(RuntimeError):
    def __init__(self, message, iterations, residual):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


def cg(apply_a, b, tol=1e-10, maxiter=500, precond=None, x0=None):
    """Solve A x = b for SPD A; returns (x, iterations, relative residual).

    `tol` is relative to ||b||.  Raises ConvergenceError past `maxiter`.
    """
    b = np.asarray(b)
    norm_b = float(np.linalg.norm(b))
    if norm_b == 0.0:
        return np.zeros_like(b), 0, 0.0
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - apply_a(x) if x0 is not None else b.copy()
    z = precond(r) if precond is not None else r
    p = z.copy()
    rz = float(np.vdot(r, z).real)
    for it in range(1, maxiter + 1):
        ap = apply_a(p)
        alpha = rz / float(np.vdot(p, ap).real)
        x += alpha * p
        r -= alpha * ap
        rel = float(np.linalg.norm(r)) / norm_b
        if rel <= tol:
            return x, it, rel
        z = precond(r) if precond is not None else r
        rz_new = float(np.vdot(r, z).real)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError("CG did not reach tol %g in %d iterations (residual %g)"
                           % (tol, maxiter, rel), maxiter, rel)
