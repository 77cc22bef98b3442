"""Zero-energy scattering on R^6: the renormalized coupling b_M and its minimizer.

The minimizer omega of the b_M variational problem solves

    (-2 Delta_M + V) omega = V,

and the density rho = V (1 - omega) = -2 Delta_M omega obeys the
Lippmann-Schwinger equation rho + V K6 rho = V on supp V, where K6 is
convolution with the free kernel of -2 Delta_M.  We discretize by Nystrom
quadrature on the midpoint grid of the support cube (cell-average weight on
the diagonal) and solve the symmetrized system

    (I + sqrt(V) K6 sqrt(V)) u = sqrt(V),      rho = sqrt(V) u

by conjugate gradients.  The grid convolution is applied through a certified
sum-of-Gaussians factorization of the kernel, which separates over the three
per-axis coordinate pairs and reduces each apply to three dense GEMMs.

Everything downstream (omega far field, V_eff, gamma, the sigma source) is
derived from rho through the Green's representation omega = K6 * rho, so no
periodic images ever enter.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import backend
from .greens import (C6, METRIC_6, GaussianSum, cell_average6, gaussian_sum,
                     pair_form_6d)
from .linalg import ConvergenceError, cg
from .potential import PotentialModel, midpoint_axis, points_of_indices

MAGIC_RHO = b"GP3RHO1\x00"


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class Grid6:
    n: int
    half_width: float

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / self.n

    @property
    def axis(self) -> np.ndarray:
        return midpoint_axis(self.n, self.half_width)

    @property
    def cell_volume(self) -> float:
        return self.h**6

    def points(self, flat_idx: np.ndarray) -> np.ndarray:
        return points_of_indices(flat_idx, self.axis)


def _pair_tensor(flat: np.ndarray, n: int) -> np.ndarray:
    """(a1,a2,a3,b1,b2,b3) -> grouped ((a1,b1),(a2,b2),(a3,b3)) tensor (n^2,n^2,n^2)."""
    return flat.reshape((n,) * 6).transpose(0, 3, 1, 4, 2, 5).reshape(n * n, n * n, n * n)


def _unpair_tensor(t: np.ndarray, n: int) -> np.ndarray:
    return t.reshape((n,) * 6).transpose(0, 2, 4, 1, 3, 5).reshape(-1)


def _mode_products(p: np.ndarray, gs: tuple[np.ndarray, np.ndarray, np.ndarray]) -> np.ndarray:
    """Apply one separable factor: out[abc] = g1[ai] g2[bj] g3[ck] p[ijk]."""
    x = p
    for g in gs:
        x = np.tensordot(g, x, axes=([1], [0]))
        x = np.moveaxis(x, 0, -1)
    return x


def _pair_coords(axis_a: np.ndarray, axis_b: np.ndarray) -> np.ndarray:
    """All (a, b) pair coordinates of two 1-D axes, shape (len_a*len_b, 2)."""
    aa, bb = np.meshgrid(axis_a, axis_b, indexing="ij")
    return np.stack([aa.ravel(), bb.ravel()], axis=1)


class GaussConv6:
    """Separable convolution with kernel6 between two pair-product grids."""

    def __init__(self, source_pairs: np.ndarray, target_pairs: np.ndarray,
                 gauss: GaussianSum):
        d = target_pairs[:, None, :] - source_pairs[None, :, :]
        q = pair_form_6d(d)
        self.gauss = gauss
        # one (t, s) Gaussian matrix per node
        self.mats = [np.exp(-t * q) for t in gauss.nodes]

    def apply(self, p: np.ndarray) -> np.ndarray:
        acc = None
        for g, w in zip(self.mats, self.gauss.weights):
            term = _mode_products(p, (g, g, g))
            acc = w * term if acc is None else acc + w * term
        return acc


@dataclass
class ScatteringSolution6:
    """Density rho on the support grid plus everything derived from it."""

    potential: PotentialModel
    grid: Grid6
    rho: np.ndarray            # flat, length n^6, >= 0
    b_m: float
    iterations: int
    residual: float
    v_grid: np.ndarray = field(repr=False)        # flat V samples
    workers: int = 1
    b_m_refined: Optional[float] = None
    b_m_error: Optional[float] = None

    def __post_init__(self):
        flat = self.rho
        self.active_idx = np.nonzero(self.v_grid > 0.0)[0]
        self.sources = self.grid.points(self.active_idx)
        self.sources_u = self.sources @ METRIC_6.inverse.T
        self.rho_active = flat[self.active_idx]
        self._flat_to_active = np.full(flat.size, -1, dtype=np.int64)
        self._flat_to_active[self.active_idx] = np.arange(self.active_idx.size)
        self._gauss_cache: dict[tuple, GaussianSum] = {}

    # -- omega bounds on the grid ------------------------------------------------

    def omega_on_support(self) -> np.ndarray:
        """omega = 1 - rho/V at the active grid points."""
        return 1.0 - self.rho_active / self.v_grid[self.active_idx]

    # -- far field ---------------------------------------------------------------

    def _self_indices(self, pts: np.ndarray) -> np.ndarray:
        # Substitute the cell-average weight only when the target sits near a
        # node center; further out the plain midpoint value is the better
        # estimate of that cell's contribution (at a cell corner the node is
        # not even uniquely defined).
        g = self.grid
        frac = (pts + g.half_width) / g.h - 0.5
        node = np.rint(frac).astype(np.int64)
        inside = np.all((node >= 0) & (node < g.n), axis=1)
        inside &= np.all(np.abs(frac - node) <= 0.25, axis=1)
        flat = np.zeros(pts.shape[0], dtype=np.int64)
        flat[inside] = np.ravel_multi_index(tuple(node[inside].T), (g.n,) * 6)
        self_idx = np.full(pts.shape[0], -1, dtype=np.int64)
        self_idx[inside] = self._flat_to_active[flat[inside]]
        return self_idx, np.where(self_idx >= 0, flat, 0)

    def _omega_raw(self, pts: np.ndarray, workers: Optional[int] = None) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.active_idx.size == 0:
            return np.zeros(pts.shape[0])
        w = workers or self.workers
        self_idx, flat = self._self_indices(pts)
        pts_u = pts @ METRIC_6.inverse.T
        vals = backend.sum_inv_r4_6d(
            np.ascontiguousarray(pts_u), np.ascontiguousarray(self.sources_u),
            self.rho_active[:, None], self_idx, w).ravel()
        vals *= C6 * self.grid.cell_volume
        has_self = self_idx >= 0
        if np.any(has_self):
            vals[has_self] += cell_average6(self.grid.h) * self.rho[flat[has_self]]
        return vals

    def omega_at(self, pts: np.ndarray, workers: Optional[int] = None,
                 symmetrize: bool = True) -> np.ndarray:
        """omega(x) = Int kernel6(x - y) rho(y) dy by the Nystrom sum.

        By default the value is averaged over the S_3 orbit of x: the exact
        minimizer is orbit-invariant, so this only removes the asymmetric
        part of the quadrature error and makes the invariance exact.  Heavy
        bulk consumers (Monte Carlo sampling) use symmetrize=False.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if not symmetrize:
            return self._omega_raw(pts, workers)
        from .potential import IMAGES

        stacked = np.concatenate([pts @ m.T for m in IMAGES], axis=0)
        vals = self._omega_raw(stacked, workers)
        return vals.reshape(len(IMAGES), pts.shape[0]).mean(axis=0)

    # -- gaussian sums, shared with gamma ------------------------------------------

    def gaussian_for(self, r_min: float, r_max: float, tol: float = 1e-9) -> GaussianSum:
        key = (round(np.log10(r_min), 1), round(np.log10(r_max), 1), tol)
        if key not in self._gauss_cache:
            self._gauss_cache[key] = gaussian_sum(4, r_min, r_max, tol)
        return self._gauss_cache[key]


def _grid_v(model: PotentialModel, grid: Grid6) -> np.ndarray:
    from .potential import grid_values

    vals, axis, h = grid_values(model, grid.n)
    return vals.reshape(-1)


def _solve_metric_range(grid: Grid6) -> tuple[float, float]:
    sv = METRIC_6.eigenvalues
    lo = grid.h * (1.0 / sv.max()) * 0.48       # covers half-cell-offset targets too
    diam = 2.0 * grid.half_width * np.sqrt(6.0)
    hi = (1.0 / sv.min()) * diam * 1.05
    return lo, hi


def solve_omega(model: PotentialModel, n: int = 12, tol: float = 1e-10,
                maxiter: int = 500, workers: Optional[int] = None,
                refine: bool = False) -> ScatteringSolution6:
    """Solve the scattering problem for V = model on an n^6 support grid.

    With refine=True a coarse n/2 solve is added and the Richardson-extrapolated
    b_M (second-order quadrature assumed) is stored with the half-grid
    difference as its error bar.
    """
    if n < 6:
        raise ValueError("grid resolution n must be at least 6")
    workers = workers or backend.default_workers()
    grid = Grid6(n, model.support_radius)
    v = _grid_v(model, grid)
    if model.is_zero or not np.any(v > 0):
        sol = ScatteringSolution6(model, grid, np.zeros(v.size), 0.0, 0, 0.0, v, workers)
        if refine:
            sol.b_m_refined = 0.0
            sol.b_m_error = 0.0
        return sol

    s = np.sqrt(v)
    h = grid.h
    lo, hi = _solve_metric_range(grid)
    gauss = gaussian_sum(4, lo, hi, 1e-9)
    pairs = _pair_coords(grid.axis, grid.axis)
    conv = GaussConv6(pairs, pairs, gauss)
    diag = cell_average6(h) - C6 * gauss.value_at_zero * grid.cell_volume

    def apply_k(x: np.ndarray) -> np.ndarray:
        p = _pair_tensor(x, n)
        out = _unpair_tensor(conv.apply(p), n) * (C6 * grid.cell_volume)
        out += diag * x
        return out

    def apply_a(u: np.ndarray) -> np.ndarray:
        return u + s * apply_k(s * u)

    u, iters, res = cg(apply_a, s, tol=tol, maxiter=maxiter)
    rho = s * u
    neg = float(rho.min())
    if neg < -1e-10 * float(v.max()):
        raise QuadratureError("rho went negative (%g); grid too coarse or kernel "
                              "quadrature failed" % neg)
    np.clip(rho, 0.0, None, out=rho)
    over = rho - v
    if float(over.max()) > 1e-10 * float(v.max()):
        raise QuadratureError("rho exceeded V by %g" % float(over.max()))
    np.minimum(rho, v, out=rho)
    b_m = float(rho.sum() * grid.cell_volume)
    sol = ScatteringSolution6(model, grid, rho, b_m, iters, res, v, workers)
    if refine:
        coarse = solve_omega(model, n=max(6, n // 2), tol=tol, maxiter=maxiter,
                             workers=workers, refine=False)
        ratio = (coarse.grid.h / h) ** 2
        sol.b_m_refined = b_m + (b_m - coarse.b_m) / (ratio - 1.0)
        sol.b_m_error = abs(b_m - coarse.b_m) / (ratio - 1.0)
    return sol


def kernel_quadratic_form(model: PotentialModel, n: int = 12) -> float:
    """<V, K6 V> on the same Nystrom grid used by solve_omega (Born-series term)."""
    grid = Grid6(n, model.support_radius)
    v = _grid_v(model, grid)
    if not np.any(v > 0):
        return 0.0
    lo, hi = _solve_metric_range(grid)
    gauss = gaussian_sum(4, lo, hi, 1e-9)
    pairs = _pair_coords(grid.axis, grid.axis)
    conv = GaussConv6(pairs, pairs, gauss)
    kv = _unpair_tensor(conv.apply(_pair_tensor(v, grid.n)), grid.n) * (C6 * grid.cell_volume)
    kv += (cell_average6(grid.h) - C6 * gauss.value_at_zero * grid.cell_volume) * v
    return float((v * kv).sum() * grid.cell_volume)


def discrete_integral(model: PotentialModel, n: int = 12) -> float:
    """Int V with the same grid weights as solve_omega."""
    grid = Grid6(n, model.support_radius)
    return float(_grid_v(model, grid).sum() * grid.cell_volume)


# ---------------------------------------------------------------------------
# effective two-body potential
# ---------------------------------------------------------------------------


@dataclass
class EffectiveField:
    """V_eff(x) = Int rho(x, y) dy on the induced 3-D grid."""

    axis: np.ndarray
    h: float
    values: np.ndarray       # (n, n, n)
    b_m: float

    @property
    def points(self) -> np.ndarray:
        g = np.meshgrid(self.axis, self.axis, self.axis, indexing="ij")
        return np.stack([a.ravel() for a in g], axis=1)

    @property
    def integral(self) -> float:
        return float(self.values.sum() * self.h**3)


def effective_potential(sol: ScatteringSolution6, refine: int = 1) -> EffectiveField:
    """Marginal of rho over the second R^3 factor.

    refine=1 sums rho rows on the induced 3-D grid.  refine>1 evaluates
    V_eff(x) = Int V(x,y)(1 - omega(x,y)) dy at a refine-times finer set of x
    nodes, with the same midpoint y quadrature and omega from the Green's
    representation; this removes the x-sampling bottleneck from the mu
    quadratures while keeping the solve fidelity unchanged.
    """
    n = sol.grid.n
    h = sol.grid.h
    if refine == 1:
        marg = sol.rho.reshape(n**3, n**3).sum(axis=1) * h**3
        return EffectiveField(sol.grid.axis, h, marg.reshape(n, n, n), sol.b_m)

    m = n * refine
    fine_axis = midpoint_axis(m, sol.grid.half_width)
    xg = np.stack(np.meshgrid(fine_axis, fine_axis, fine_axis, indexing="ij"),
                  axis=-1).reshape(-1, 3)
    yg = np.stack(np.meshgrid(sol.grid.axis, sol.grid.axis, sol.grid.axis, indexing="ij"),
                  axis=-1).reshape(-1, 3)
    out = np.zeros(xg.shape[0])
    chunk = max(1, 2_000_000 // yg.shape[0])
    for lo in range(0, xg.shape[0], chunk):
        hi = min(lo + chunk, xg.shape[0])
        pairs = np.concatenate([
            np.repeat(xg[lo:hi], yg.shape[0], axis=0),
            np.tile(yg, (hi - lo, 1))], axis=1)
        v = sol.potential.evaluate(pairs)
        nz = np.nonzero(v)[0]
        if nz.size:
            om = self_omega = sol._omega_raw(pairs[nz])
            dens = np.zeros(v.size)
            dens[nz] = v[nz] * (1.0 - om)
        else:
            dens = np.zeros(v.size)
        out[lo:hi] = dens.reshape(hi - lo, yg.shape[0]).sum(axis=1) * h**3
    return EffectiveField(fine_axis, 2.0 * sol.grid.half_width / m,
                          out.reshape(m, m, m), sol.b_m)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def save_solution(path, sol: ScatteringSolution6) -> None:
    """GP3RHO1 binary: magic, u64 n, f64 h, six f64 support-center coords, rho."""
    with open(path, "wb") as fh:
        fh.write(MAGIC_RHO)
        fh.write(struct.pack("<Q", sol.grid.n))
        fh.write(struct.pack("<d", sol.grid.h))
        fh.write(struct.pack("<6d", *([0.0] * 6)))
        fh.write(np.ascontiguousarray(sol.rho, dtype="<f8").tobytes())


def load_rho(path) -> tuple[int, float, np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC_RHO:
            raise QuadratureError("bad rho file magic %r" % magic)
        (n,) = struct.unpack("<Q", fh.read(8))
        (h,) = struct.unpack("<d", fh.read(8))
        center = np.array(struct.unpack("<6d", fh.read(48)))
        rho = np.frombuffer(fh.read(n**6 * 8), dtype="<f8").copy()
    return int(n), float(h), center, rho


def load_solution(path, model: PotentialModel, workers: Optional[int] = None) -> ScatteringSolution6:
    n, h, _center, rho = load_rho(path)
    grid = Grid6(n, model.support_radius)
    if abs(grid.h - h) > 1e-12 * max(1.0, h):
        raise QuadratureError("stored spacing %g does not match potential grid %g" % (h, grid.h))
    v = _grid_v(model, grid)
    b_m = float(rho.sum() * grid.cell_volume)
    return ScatteringSolution6(model, grid, rho, b_m, 0, 0.0, v,
                               workers or backend.default_workers())
