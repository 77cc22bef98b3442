"""Energy-correction coefficients mu(V) and gamma(V) from the scattering solution.

mu is the Coulomb quadratic form of the effective two-body potential,

    mu = Int V_eff(x) V_eff(y) / (8 pi |x-y|) dx dy,

computed twice: in Fourier space (multiplier 1/(2|k|^2), the reported value)
and in real space (Nystrom double sum, the audit oracle).  The variational
form of mu evaluates to minus one half of the closed Coulomb form at its
minimizer; both numbers are recorded, the closed form is the coefficient.

gamma couples the three-body correlation to itself through a third particle:

    gamma = Int V(x,y) w(x,z) w(y,z) + (1/2) Int V(x,y) w(y,z)^2,

with w = omega.  The z integration runs over a fixed cube plus an analytic
|z|^-4 tail bound (added to the error, not the value).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import backend
from .greens import C6, METRIC_6, cell_average6
from .scatter6 import (EffectiveField, GaussConv6, Grid6, ScatteringSolution6,
                       _pair_coords, _pair_tensor)

# Coulomb self-integral of the unit cube: Int_{[-1/2,1/2]^3} |u|^-1 du,
# via the polar reduction (1/8) Int_{S^2} |theta|_inf^-2 dtheta.
_CUBE_COULOMB: Optional[float] = None


class TailBoundError(RuntimeError):
    """Tail fraction too large: retry with a larger z-cube."""


def cube_coulomb_constant() -> float:
    global _CUBE_COULOMB
    if _CUBE_COULOMB is None:
        from .greens import ModifiedMetric, _angular_constant

        identity3 = ModifiedMetric(3, np.eye(3), np.eye(3), np.ones(3), 1.0, np.eye(3))
        _CUBE_COULOMB = _angular_constant(identity3) / 8.0
    return _CUBE_COULOMB


@dataclass
class MuResult:
    value: float
    method: str                 # "fourier" | "realspace"
    error: float
    variational_value: float    # inf-form value = -value/2
    k_max: Optional[float] = None


@dataclass
class GammaResult:
    value: float
    error: float
    z_half_width: float
    tail_bound: float
    tail_constant: float        # fitted sup |z|^4 omega on the bounding sphere
    z_quadrature_error: float


# ---------------------------------------------------------------------------
# mu, real space
# ---------------------------------------------------------------------------


def mu_realspace(veff: EffectiveField) -> MuResult:
    """Nystrom double sum of the 1/(8 pi r) kernel with a cell self-integral."""
    pts = veff.points
    vals = veff.values.ravel()
    nz = np.nonzero(vals)[0]
    p = pts[nz]
    v = vals[nz]
    h = veff.h
    w3 = h**3
    diff = p[:, None, :] - p[None, :, :]
    r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(r, 1.0)
    kmat = w3 * w3 / (8.0 * math.pi * r)
    np.fill_diagonal(kmat, w3 * h * h * cube_coulomb_constant() / (8.0 * math.pi))
    mu = float(v @ kmat @ v)

    # coarsened oracle: Richardson-style error estimate from the 2h merge
    mu_c = _mu_realspace_coarse(veff)
    err = abs(mu - mu_c) / 3.0 if mu_c is not None else 0.1 * abs(mu)
    return MuResult(mu, "realspace", err, -0.5 * mu)


def _mu_realspace_coarse(veff: EffectiveField) -> Optional[float]:
    n = veff.values.shape[0]
    if n % 2:
        return None
    v = veff.values.reshape(n // 2, 2, n // 2, 2, n // 2, 2).mean(axis=(1, 3, 5))
    coarse = EffectiveField(
        axis=veff.axis.reshape(n // 2, 2).mean(axis=1),
        h=2.0 * veff.h, values=v, b_m=veff.b_m)
    pts = coarse.points
    vals = coarse.values.ravel()
    nz = np.nonzero(vals)[0]
    p = pts[nz]
    vv = vals[nz]
    h = coarse.h
    diff = p[:, None, :] - p[None, :, :]
    r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(r, 1.0)
    kmat = h**6 / (8.0 * math.pi * r)
    np.fill_diagonal(kmat, h**3 * h * h * cube_coulomb_constant() / (8.0 * math.pi))
    return float(vv @ kmat @ vv)


# ---------------------------------------------------------------------------
# mu, Fourier space
# ---------------------------------------------------------------------------


def _fibonacci_sphere(m: int) -> np.ndarray:
    i = np.arange(m) + 0.5
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    z = 1.0 - 2.0 * i / m
    r = np.sqrt(1.0 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _veff_hat(veff: EffectiveField, ks: np.ndarray) -> np.ndarray:
    # Transform of the interpolating cubic B-spline through the samples:
    # point DFT times sinc^4(k h/2) / ((2 + cos k h)/3) per axis.  The spline
    # interpolant is 4th-order accurate, so this V_hat estimate keeps a flat
    # O(h^4) relative error instead of the (k h)^2 growth of the raw DFT.
    pts = veff.points
    vals = veff.values.ravel()
    nz = np.nonzero(vals)[0]
    p = pts[nz]
    v = vals[nz]
    out = np.empty(ks.shape[0], dtype=complex)
    for lo in range(0, ks.shape[0], 512):
        hi = min(lo + 512, ks.shape[0])
        out[lo:hi] = v @ np.exp(-1j * (p @ ks[lo:hi].T))
    kh = ks * veff.h
    win = np.prod(np.sinc(kh / (2.0 * math.pi)) ** 4 * 3.0 / (2.0 + np.cos(kh)), axis=1)
    return out * veff.h**3 * win


def mu_fourier(veff: EffectiveField, n_dirs: int = 192, n_radial: int = 48,
               decay_cut: float = 1e-8) -> MuResult:
    """mu = (1/(2 (2pi)^3)) Int |Veff_hat(k)|^2 / |k|^2 dk in spherical form.

    The 1/|k|^2 singularity cancels against the k^2 of the volume element, so
    the radial integrand is the angular mean of |Veff_hat|^2 (no special
    treatment needed beyond the spherical average).  The radial range ends
    where |Veff_hat| has decayed below decay_cut relative to Veff_hat(0), but
    never beyond the grid Nyquist scale pi/h: past it the quadrature transform
    aliases instead of decaying.  An unreachable spectral tail is folded into
    the error estimate.
    """
    v0 = float(veff.values.sum() * veff.h**3)
    if v0 == 0.0:
        return MuResult(0.0, "fourier", 0.0, 0.0, 0.0)
    # beyond the sample Nyquist the interpolant's spectrum is artifact: the
    # data cannot inform those frequencies, so integration stops there and the
    # (bounded) true tail goes into the error estimate
    k_cap = math.pi / veff.h
    probe_dirs = _fibonacci_sphere(24)
    k_max = None
    vh_cap = 0.0
    for k in np.geomspace(1.0, k_cap, 60):
        vh_cap = float(np.abs(_veff_hat(veff, k * probe_dirs)).max())
        if vh_cap < decay_cut * abs(v0):
            k_max = float(k)
            break
    tail_err = 0.0
    if k_max is None:
        import warnings

        warnings.warn("mu_fourier: |Veff_hat| did not decay below the cutoff "
                      "within the grid-resolved k range; tail added to error",
                      RuntimeWarning)
        k_max = k_cap
        # bound the missing Int_{k>k_max} mean|Vhat|^2 dk assuming >= k^-2 decay
        tail_err = 4.0 * math.pi * vh_cap**2 * k_max / (3.0 * 2.0 * (2.0 * math.pi) ** 3)

    value = _mu_fourier_quad(veff, n_dirs, n_radial, k_max)
    coarse = _mu_fourier_quad(veff, n_dirs // 2, n_radial // 2, k_max)
    err = abs(value - coarse) + tail_err
    return MuResult(value, "fourier", err, -0.5 * value, k_max)


def _mu_fourier_quad(veff: EffectiveField, n_dirs: int, n_radial: int, k_max: float) -> float:
    dirs = _fibonacci_sphere(n_dirs)
    nodes, weights = np.polynomial.legendre.leggauss(n_radial)
    kr = 0.5 * k_max * (nodes + 1.0)
    wr = 0.5 * k_max * weights
    total = 0.0
    for k, w in zip(kr, wr):
        vh = _veff_hat(veff, k * dirs)
        total += w * float(np.mean(np.abs(vh) ** 2))
    # Int dk = Int k^2 dk dOmega; integrand |Vhat|^2/k^2; dOmega mean * 4pi
    return total * 4.0 * math.pi / (2.0 * (2.0 * math.pi) ** 3)


def small_lambda_mu_limit(sol: ScatteringSolution6) -> float:
    """The omega-free double integral Int V(x,u)V(y,v)/(8 pi |x-y|) at unit
    coupling: the dominated-convergence limit of mu(lambda V)/lambda^2,
    evaluated with the same grid weights (marginal of V instead of rho)."""
    lam = sol.potential.coupling
    if lam == 0.0:
        return 0.0
    n = sol.grid.n
    h = sol.grid.h
    marg = sol.v_grid.reshape(n**3, n**3).sum(axis=1) * (h**3 / lam)
    bare = EffectiveField(sol.grid.axis, h, marg.reshape(n, n, n), 0.0)
    return mu_realspace(bare).value


# ---------------------------------------------------------------------------
# gamma
# ---------------------------------------------------------------------------


def _omega_product_grid(sol: ScatteringSolution6, z_axis: np.ndarray) -> np.ndarray:
    """omega(x, z) for x on the 3-D support axes and z on z_axis, via the
    separable Gaussian factorization (targets form a per-axis product)."""
    g = sol.grid
    x_axis = g.axis
    lo = 0.35 * g.h / METRIC_6.eigenvalues.max()
    span = 2.0 * (g.half_width + float(np.abs(z_axis).max()) + g.h)
    hi = span * math.sqrt(6.0) / METRIC_6.eigenvalues.min()
    # omega here feeds the coarse z-quadrature of gamma; 1e-7 kernel accuracy
    # is far below that error floor and saves a third of the Gaussian nodes
    gauss = sol.gaussian_for(lo, hi, tol=1e-7)
    src_pairs = _pair_coords(x_axis, x_axis)
    tgt_pairs = _pair_coords(x_axis, z_axis)
    conv = GaussConv6(src_pairs, tgt_pairs, gauss)
    p = _pair_tensor(sol.rho, g.n)
    out = conv.apply(p) * (C6 * g.cell_volume)
    nx = x_axis.size
    nz = z_axis.size
    # axes currently ((x1,z1),(x2,z2),(x3,z3)); regroup to (x-grid, z-grid)
    out = out.reshape(nx, nz, nx, nz, nx, nz).transpose(0, 2, 4, 1, 3, 5)
    return out.reshape(nx**3, nz**3)


def _z_axis(sol: ScatteringSolution6, z_half_width: float, spacing_cells: int = 2) -> tuple[np.ndarray, float]:
    """Midpoint z-axis with spacing = spacing_cells * h, offset from the source
    lattice by h/2 so no target ever coincides with a source point."""
    h = sol.grid.h
    dz = spacing_cells * h
    m = max(2, int(round(2.0 * z_half_width / dz)))
    axis = -0.5 * m * dz + dz * (np.arange(m) + 0.5)
    return axis, dz


def gamma(model, sol: ScatteringSolution6, z_half_width: Optional[float] = None,
          workers: Optional[int] = None, tail_safety: float = 1.5,
          max_tail_fraction: float = 0.10) -> GammaResult:
    """gamma = Int V(x,y) w(x,z) w(y,z) + (1/2) Int V(x,y) w(y,z)^2.

    The outer (x,y) quadrature reuses the rho grid; the inner z quadrature is
    a midpoint cube of half-width Z >= 4 R_V; the |z|>Z remainder is bounded
    analytically with the fitted far-field constant and reported as part of
    the error estimate.
    """
    r_v = model.support_radius
    z_hw = z_half_width if z_half_width is not None else 4.0 * r_v
    if z_hw < 4.0 * r_v - 1e-12:
        raise ValueError("z cube half-width must be at least 4 R_V")
    if sol.active_idx.size == 0:
        return GammaResult(0.0, 0.0, z_hw, 0.0, 0.0, 0.0)

    value, vint = _gamma_on_zgrid(model, sol, z_hw, spacing_cells=2)
    coarse, _ = _gamma_on_zgrid(model, sol, z_hw, spacing_cells=4)
    z_err = 0.5 * abs(value - coarse)

    # far-field constant on the bounding sphere |z| = Z
    dirs = _fibonacci_sphere(96)
    xs = sol.grid.axis
    xg = np.stack(np.meshgrid(xs, xs, xs, indexing="ij"), axis=-1).reshape(-1, 3)
    keep = np.linalg.norm(xg, axis=1) <= r_v
    xg = xg[keep][:: max(1, keep.sum() // 400)]
    tgts = np.concatenate([
        np.concatenate([np.repeat(xg, dirs.shape[0], axis=0),
                        np.tile(z_hw * dirs, (xg.shape[0], 1))], axis=1)])
    om = sol._omega_raw(tgts, workers)
    c_fit = tail_safety * float(om.max()) * z_hw**4

    tail = 1.5 * vint * c_fit**2 * 4.0 * math.pi / (5.0 * z_hw**5)
    if tail > max_tail_fraction * max(value, 1e-300):
        raise TailBoundError("gamma tail bound %.3g exceeds %.0f%% of gamma %.3g; "
                             "increase the z cube" % (tail, 100 * max_tail_fraction, value))
    return GammaResult(value, z_err + tail, z_hw, tail, c_fit, z_err)


def _gamma_on_zgrid(model, sol: ScatteringSolution6, z_hw: float, spacing_cells: int) -> tuple[float, float]:
    g = sol.grid
    n3 = g.n**3
    z_axis, dz = _z_axis(sol, z_hw, spacing_cells)
    omega_xz = _omega_product_grid(sol, z_axis)
    w_z = dz**3
    w6 = g.cell_volume

    v_pair = sol.v_grid.reshape(n3, n3)
    vint = float(v_pair.sum() * w6)
    # term1: sum_z w_z * Omega[:,z]^T Vmat Omega[:,z]
    vo = v_pair @ omega_xz          # (n3, Nz)
    term1 = w6 * w_z * float(np.einsum("iz,iz->", omega_xz, vo))
    # term2: (1/2) sum_(x,y) V[x,y] * B[y],  B[y] = sum_z w_z omega[y,z]^2
    b = w_z * np.einsum("iz,iz->i", omega_xz, omega_xz)
    term2 = 0.5 * w6 * float(v_pair.sum(axis=0) @ b)
    return term1 + term2, vint
