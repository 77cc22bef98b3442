"""Modified metrics and free Green's kernels.

The two kinetic metrics arising from relative coordinates of three and four
particles are

    M^2  = (1/2) [[2,1],[1,2]]          (x) I_3   on R^6,
    M*^2 = (1/2) [[2,1,1],[1,2,1],[1,1,2]] (x) I_3   on R^9.

The Green's function of -2*div(M^2 grad) on R^d is c_d / |M^-1 x|^(d-2)
with c_6 = 1/(8 pi^3 det M) and c_9 = Gamma(9/2)/(28 pi^(9/2) det M*).

For fast grid convolutions the radial profile r^-p is factorized into a
certified sum of Gaussians, sum_m w_m exp(-t_m r^2), valid on a requested
radius interval to a relative tolerance; each Gaussian separates over the
per-spatial-axis coordinate blocks of the metric quadratic form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammainc
from scipy.stats import qmc

GAMMA_9_2 = 105.0 * math.sqrt(math.pi) / 16.0  # Gamma(9/2)


def _lift(core: np.ndarray) -> np.ndarray:
    return np.kron(core, np.eye(3))


@dataclass(frozen=True)
class ModifiedMetric:
    """Symmetric square root of the lifted kinetic block matrix."""

    dimension: int
    matrix: np.ndarray      # M (or M*), shape (d, d)
    inverse: np.ndarray     # M^-1
    eigenvalues: np.ndarray
    determinant: float
    core_squared: np.ndarray  # the 2x2 or 3x3 block pattern of M^2

    @property
    def matrix_squared(self) -> np.ndarray:
        return self.matrix @ self.matrix

    def metric_coords(self, x: np.ndarray) -> np.ndarray:
        """Map points (..., d) to u = M^-1 x."""
        return x @ self.inverse.T

    def metric_norm(self, x: np.ndarray) -> np.ndarray:
        u = self.metric_coords(np.atleast_2d(x))
        return np.sqrt(np.einsum("ij,ij->i", u, u))


def _build_metric(core: np.ndarray) -> ModifiedMetric:
    lifted = _lift(core)
    evals, evecs = np.linalg.eigh(lifted)
    root = (evecs * np.sqrt(evals)) @ evecs.T
    inv = (evecs / np.sqrt(evals)) @ evecs.T
    det = float(np.prod(np.sqrt(evals)))
    return ModifiedMetric(
        dimension=lifted.shape[0],
        matrix=root,
        inverse=inv,
        eigenvalues=np.sqrt(evals),
        determinant=det,
        core_squared=core,
    )


METRIC_6 = _build_metric(0.5 * np.array([[2.0, 1.0], [1.0, 2.0]]))
METRIC_9 = _build_metric(0.5 * np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]))

# det M = (3/4)^(3/2), det M* = 2^(-3/2); asserted exactly in the tests.
C6 = 1.0 / (8.0 * math.pi**3 * METRIC_6.determinant)
C9 = GAMMA_9_2 / (28.0 * math.pi ** 4.5 * METRIC_9.determinant)

# Per-spatial-axis inverse quadratic forms: |M^-1 d|^2 = sum_axis q(d_axis),
# where d_axis collects the axis components of each particle-pair coordinate.
# core_sq_inv is the 2x2 (resp. 3x3) inverse of the core of M^2.
CORE_INV_6 = np.linalg.inv(METRIC_6.core_squared)   # (4/3) [[1,-1/2],[-1/2,1]]
CORE_INV_9 = np.linalg.inv(METRIC_9.core_squared)   # [[1.5,-.5,-.5],...]

_EPS_SINGULAR = 1e-12


class SingularEvaluation(ValueError):
    """Kernel evaluated too close to the origin."""


def kernel6(x: np.ndarray, eps: float = _EPS_SINGULAR) -> np.ndarray:
    """Green's kernel of -2*Delta_M on R^6: c6 / |M^-1 x|^4."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    r = METRIC_6.metric_norm(x)
    if np.any(np.linalg.norm(x, axis=1) < eps):
        raise SingularEvaluation("kernel6 evaluated within %g of the origin" % eps)
    out = C6 / r**4
    return out if out.size > 1 else float(out[0])


def kernel9(x: np.ndarray, eps: float = _EPS_SINGULAR) -> np.ndarray:
    """Green's kernel of -2*Delta_M* on R^9: c9 / |M*^-1 x|^7."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    r = METRIC_9.metric_norm(x)
    if np.any(np.linalg.norm(x, axis=1) < eps):
        raise SingularEvaluation("kernel9 evaluated within %g of the origin" % eps)
    out = C9 / r**7
    return out if out.size > 1 else float(out[0])


# ---------------------------------------------------------------------------
# cell averages (Nystrom self-interaction weights)
# ---------------------------------------------------------------------------
#
# In metric polar coordinates the integral of c_d |M^-1 z|^(2-d) over the cube
# [-h/2, h/2]^d is exactly
#
#     c_d det(M) (h^2/8) * Int_{S^(d-1)} |M theta|_inf^(-2) dtheta,
#
# so the angular factor is a single metric constant and the weight scales as
# h^2.  The angular integral is evaluated once by deterministic Sobol
# quasi-Monte Carlo (the integrand is bounded: |M theta|_inf in
# [sigma_min/sqrt(d), sigma_max]).

_N_QMC = 1 << 21


def _angular_constant(metric: ModifiedMetric) -> float:
    d = metric.dimension
    sob = qmc.Sobol(d, scramble=False, seed=0)
    pts = np.clip(sob.random(_N_QMC), 1e-12, 1.0 - 1e-12)
    z = np.sqrt(2.0) * _erfinv_arr(2.0 * pts - 1.0)
    norms = np.linalg.norm(z, axis=1)
    keep = norms > 1e-9  # drops the degenerate all-0.5 point
    theta = z[keep] / norms[keep, None]
    m_theta = theta @ metric.matrix.T
    vals = 1.0 / np.max(np.abs(m_theta), axis=1) ** 2
    # surface area of S^(d-1)
    area = 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)
    return float(vals.mean() * area)


def _erfinv_arr(y):
    from scipy.special import erfinv

    return erfinv(y)


_ANGULAR_6: float | None = None
_ANGULAR_9: float | None = None


def cell_average6(h: float) -> float:
    """Integral of kernel6 over the cube [-h/2, h/2]^6 (self-cell weight)."""
    global _ANGULAR_6
    if _ANGULAR_6 is None:
        _ANGULAR_6 = _angular_constant(METRIC_6)
    return C6 * METRIC_6.determinant * (h * h / 8.0) * _ANGULAR_6


def cell_average9(h: float) -> float:
    """Integral of kernel9 over the cube [-h/2, h/2]^9 (self-cell weight)."""
    global _ANGULAR_9
    if _ANGULAR_9 is None:
        _ANGULAR_9 = _angular_constant(METRIC_9)
    return C9 * METRIC_9.determinant * (h * h / 8.0) * _ANGULAR_9


# ---------------------------------------------------------------------------
# certified sum-of-Gaussians factorization of r^-p
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianSum:
    """r^-p ~ sum_m weights[m] * exp(-nodes[m] r^2) on [r_min, r_max]."""

    power: int
    nodes: np.ndarray
    weights: np.ndarray
    r_min: float
    r_max: float
    rel_error: float

    def evaluate(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return np.exp(-np.multiply.outer(r * r, self.nodes)) @ self.weights

    @property
    def value_at_zero(self) -> float:
        return float(self.weights.sum())


def gaussian_sum(power: int, r_min: float, r_max: float, tol: float = 1e-9) -> GaussianSum:
    """Trapezoid-in-log discretization of r^-p = Int t^(p/2-1) e^(-t r^2) dt / Gamma(p/2).

    The node spacing is refined until the factorization is certified to the
    requested relative tolerance on a dense radius grid.
    """
    if r_min <= 0 or r_max <= r_min:
        raise ValueError("need 0 < r_min < r_max")
    half_p = power / 2.0
    gamma_p = math.gamma(half_p)
    # truncation limits chosen so each tail contributes < tol/4 relative
    t_lo = (0.25 * tol * math.gamma(half_p + 1.0)) ** (1.0 / half_p) / r_max**2
    t_hi = (math.log(4.0 / tol) + half_p * math.log(math.log(4.0 / tol) + 4.0)) / r_min**2
    probe = np.geomspace(r_min, r_max, 2048)
    exact = probe ** (-float(power))
    step = 0.5
    for _ in range(12):
        s = np.arange(math.log(t_lo), math.log(t_hi) + step, step)
        t = np.exp(s)
        w = step * t**half_p / gamma_p
        approx = np.exp(-np.multiply.outer(probe * probe, t)) @ w
        err = float(np.max(np.abs(approx / exact - 1.0)))
        if err <= tol:
            return GaussianSum(power, t, w, r_min, r_max, err)
        step *= 0.7
    raise RuntimeError("gaussian_sum failed to certify tolerance %g (got %g)" % (tol, err))


def pair_form_6d(d_pair: np.ndarray) -> np.ndarray:
    """Per-axis quadratic form of |M^-1 d|^2 on R^6 given (d_a, d_b) pairs (...,2)."""
    a = d_pair[..., 0]
    b = d_pair[..., 1]
    c = CORE_INV_6
    return c[0, 0] * a * a + 2.0 * c[0, 1] * a * b + c[1, 1] * b * b


def triple_form_9d(d_tri: np.ndarray) -> np.ndarray:
    """Per-axis quadratic form of |M*^-1 d|^2 on R^9 given coordinate triples (...,3)."""
    a = d_tri[..., 0]
    b = d_tri[..., 1]
    c = d_tri[..., 2]
    m = CORE_INV_9
    return (m[0, 0] * a * a + m[1, 1] * b * b + m[2, 2] * c * c
            + 2.0 * (m[0, 1] * a * b + m[0, 2] * a * c + m[1, 2] * b * c))


def ball_integral_inv_pow(metric: ModifiedMetric, power: int, radius: float) -> float:
    """Integral of |M^-1 z|^-power over the metric ball |M^-1 z| <= radius."""
    d = metric.dimension
    area = 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)
    expo = d - power  # radial integrand r^(d-1-power)
    return metric.determinant * area * radius**expo / expo


def ball_integral_gaussian(metric: ModifiedMetric, t: np.ndarray, radius: float) -> np.ndarray:
    """Integral of exp(-t |M^-1 z|^2) over the metric ball, for each node t."""
    d = metric.dimension
    area = 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)
    # Int_0^R e^{-t s^2} s^(d-1) ds = Gamma(d/2) * gammainc(d/2, t R^2) / (2 t^(d/2))
    x = t * radius * radius
    rad = math.gamma(d / 2.0) * gammainc(d / 2.0, x) / (2.0 * t ** (d / 2.0))
    return metric.determinant * area * rad
