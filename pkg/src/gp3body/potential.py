"""Three-body potentials on R^6: definition, symmetrization, validation, Fourier.

A potential is a non-negative, compactly supported function V(a, b) of the
pair of relative coordinates.  The three-body interaction built from it is
permutation symmetric exactly when V is invariant under the six coordinate
images

    (a,b), (b,a), (-a,b-a), (b-a,-a), (-b,a-b), (a-b,-b),

which form the action of S_3 on relative coordinates.  `symmetrize` averages
a raw profile over this orbit.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

MAGIC_POT = b"GP3POT1\x00"

# S_3 images as 2x2 integer block matrices acting on the (a, b) pair.
_IMAGE_CORES = [
    np.array([[1, 0], [0, 1]]),
    np.array([[0, 1], [1, 0]]),
    np.array([[-1, 0], [-1, 1]]),
    np.array([[-1, 1], [-1, 0]]),
    np.array([[0, -1], [1, -1]]),
    np.array([[1, -1], [0, -1]]),
]
IMAGES = [np.kron(core, np.eye(3)) for core in _IMAGE_CORES]

# Largest inverse singular value over the images: the symmetrized support
# radius is this factor times the base profile's support radius.
SUPPORT_GROWTH = max(1.0 / np.linalg.svd(m, compute_uv=False).min() for m in IMAGES)


class PotentialError(ValueError):
    pass


def bump_profile(points: np.ndarray, radius: float = 1.0) -> np.ndarray:
    """Smooth radial bump e * exp(-1/(1 - (|x|/radius)^2)) for |x| < radius."""
    points = np.atleast_2d(points)
    s = np.einsum("ij,ij->i", points, points) / (radius * radius)
    out = np.zeros(s.shape)
    inside = s < 1.0
    with np.errstate(divide="ignore", over="ignore"):
        out[inside] = math.e * np.exp(-1.0 / (1.0 - s[inside]))
    return out


@dataclass
class PotentialModel:
    """Symmetrized three-body potential lambda * profile(a, b)."""

    base_profile: Callable[[np.ndarray], np.ndarray]
    coupling: float
    support_radius: float
    symmetrized: bool = True
    name: str = "bump"

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """V at points of shape (N, 6)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != 6:
            raise PotentialError("potential points must be 6-dimensional")
        return self.coupling * self.base_profile(points)

    def with_coupling(self, coupling: float) -> "PotentialModel":
        return PotentialModel(self.base_profile, coupling, self.support_radius,
                              self.symmetrized, self.name)

    @property
    def is_zero(self) -> bool:
        return self.coupling == 0.0


def symmetrize(profile: Callable[[np.ndarray], np.ndarray], support_radius: float,
               coupling: float = 1.0, name: str = "custom",
               check_points: int = 512, seed: int = 7) -> PotentialModel:
    """Average a raw profile over the six S_3 coordinate images.

    Rejects profiles with negative samples (checked on a random point set) or
    unbounded support (checked on a shell outside the claimed radius).
    """
    rng = np.random.default_rng(seed)
    probe = rng.uniform(-support_radius, support_radius, size=(check_points, 6))
    vals = np.atleast_1d(profile(probe))
    if np.any(vals < 0):
        i = int(np.argmin(vals))
        raise PotentialError("profile is negative at %s (value %g)" % (probe[i], vals[i]))
    shell = rng.normal(size=(check_points, 6))
    shell *= (support_radius * (1.0 + 0.1 * rng.random(check_points)) /
              np.linalg.norm(shell, axis=1))[:, None]
    sv = np.atleast_1d(profile(shell))
    if np.any(sv != 0.0):
        i = int(np.argmax(np.abs(sv)))
        raise PotentialError("profile not supported in |x| < %g: value %g at |x|=%g"
                             % (support_radius, sv[i], np.linalg.norm(shell[i])))

    mats = [m.copy() for m in IMAGES]

    def sym(points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        acc = np.zeros(points.shape[0])
        for m in mats:
            acc += np.atleast_1d(profile(points @ m.T))
        return acc / 6.0

    return PotentialModel(sym, coupling, SUPPORT_GROWTH * support_radius,
                          symmetrized=True, name=name)


def default_bump(coupling: float = 1.0, base_radius: float = 1.0) -> PotentialModel:
    """The built-in smooth bump, symmetrized."""
    return symmetrize(lambda p: bump_profile(p, base_radius), base_radius,
                      coupling=coupling, name="bump")


def zero_potential() -> PotentialModel:
    return PotentialModel(lambda p: np.zeros(np.atleast_2d(p).shape[0]), 0.0, 1.0,
                          symmetrized=True, name="zero")


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


@dataclass
class Certification:
    ok: bool
    max_negative: float
    max_support_violation: float
    symmetry_violations: list  # (image index, max violation, witness point)
    tolerance: float

    def to_dict(self) -> dict:
        return {
            "ok": bool(self.ok),
            "max_negative": float(self.max_negative),
            "max_support_violation": float(self.max_support_violation),
            "symmetry_violations": [
                {"image": int(i), "violation": float(v), "witness": [float(c) for c in w]}
                for i, v, w in self.symmetry_violations
            ],
            "tolerance": float(self.tolerance),
        }


def validate(model: PotentialModel, n_points: int = 2000, seed: int = 11,
             tol: float = 1e-10) -> Certification:
    """Certify non-negativity, compact support, and the six symmetry identities."""
    rng = np.random.default_rng(seed)
    r = model.support_radius
    pts = rng.uniform(-r, r, size=(n_points, 6))
    vals = model.evaluate(pts)
    max_neg = float(max(0.0, -vals.min())) if vals.size else 0.0

    shell = rng.normal(size=(n_points, 6))
    shell *= (r * (1.0 + rng.random(n_points)) / np.linalg.norm(shell, axis=1))[:, None]
    max_supp = float(np.abs(model.evaluate(shell)).max())

    sym_viol = []
    for idx, m in enumerate(IMAGES[1:], start=1):
        imgv = model.evaluate(pts @ m.T)
        diff = np.abs(imgv - vals)
        j = int(np.argmax(diff))
        sym_viol.append((idx, float(diff[j]), pts[j]))

    worst_sym = max(v for _, v, _ in sym_viol)
    ok = max_neg <= tol and max_supp <= tol and worst_sym <= tol
    return Certification(ok, max_neg, max_supp, sym_viol, tol)


# ---------------------------------------------------------------------------
# Fourier transform
# ---------------------------------------------------------------------------


@dataclass
class FourierTable:
    wavevectors: np.ndarray   # (K, 6)
    values: np.ndarray        # complex (K,)
    value_at_zero: float      # quadrature of V itself
    error_estimate: float
    quadrature_n: int


def midpoint_axis(n: int, half_width: float) -> np.ndarray:
    """Midpoint-rule nodes of n cells covering [-half_width, half_width]."""
    h = 2.0 * half_width / n
    return -half_width + h * (np.arange(n) + 0.5)


def grid_values(model: PotentialModel, n: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Sample V on the n^6 midpoint grid of its support cube: (values, axis, h)."""
    axis = midpoint_axis(n, model.support_radius)
    h = 2.0 * model.support_radius / n
    vals = np.empty((n,) * 6)
    # chunk over the leading axis to bound memory
    rest = np.stack(np.meshgrid(axis, axis, axis, axis, axis, indexing="ij"),
                    axis=-1).reshape(-1, 5)
    for i, a0 in enumerate(axis):
        pts = np.concatenate([np.full((rest.shape[0], 1), a0), rest], axis=1)
        vals[i] = model.evaluate(pts).reshape((n,) * 5)
    return vals, axis, h


def points_of_indices(flat_idx: np.ndarray, axis: np.ndarray) -> np.ndarray:
    """Coordinates (N, 6) of flat grid indices on the tensor grid axis^6."""
    n = axis.size
    idx = np.unravel_index(flat_idx, (n,) * 6)
    return np.stack([axis[i] for i in idx], axis=1)


def _dft_at(vals: np.ndarray, axis: np.ndarray, h: float, wavevectors: np.ndarray) -> np.ndarray:
    flat = vals.reshape(-1)
    nz = np.nonzero(flat)[0]
    pts_nz = points_of_indices(nz, axis)
    flat_nz = flat[nz]
    out = np.empty(wavevectors.shape[0], dtype=complex)
    for lo in range(0, wavevectors.shape[0], 64):
        hi = min(lo + 64, wavevectors.shape[0])
        phase = np.exp(-1j * (pts_nz @ wavevectors[lo:hi].T))
        out[lo:hi] = flat_nz @ phase
    return out * h**6


def fourier(model: PotentialModel, wavevectors: np.ndarray, n: int = 12) -> FourierTable:
    """V_hat(p,q) = Int V(a,b) exp(-i(p.a + q.b)) da db by midpoint tensor quadrature.

    The error estimate is the maximum refinement difference against the n/2
    quadrature.
    """
    wavevectors = np.atleast_2d(np.asarray(wavevectors, dtype=float))
    if wavevectors.shape[1] != 6:
        raise PotentialError("wavevectors must be 6-dimensional")
    if model.is_zero:
        z = np.zeros(wavevectors.shape[0], dtype=complex)
        return FourierTable(wavevectors, z, 0.0, 0.0, n)
    vals, axis, h = grid_values(model, n)
    vhat = _dft_at(vals, axis, h, wavevectors)
    n2 = max(4, n // 2)
    vals2, axis2, h2 = grid_values(model, n2)
    vhat2 = _dft_at(vals2, axis2, h2, wavevectors)
    err = float(np.abs(vhat - vhat2).max())
    if err > 0.05 * max(1e-300, float(np.abs(vhat).max())):
        warnings.warn("fourier quadrature refinement ratio suggests poor convergence",
                      RuntimeWarning)
    v0 = float(vals.sum() * h**6)
    return FourierTable(wavevectors, vhat, v0, err, n)


# ---------------------------------------------------------------------------
# table potentials and config loading
# ---------------------------------------------------------------------------


def save_table(path, values: np.ndarray) -> None:
    """Write a GP3POT1 binary table: 32-byte header then float64 payload."""
    values = np.ascontiguousarray(values, dtype="<f8")
    if values.ndim != 6 or len(set(values.shape)) != 1:
        raise PotentialError("table must be an n^6 grid")
    n = values.shape[0]
    with open(path, "wb") as fh:
        fh.write(MAGIC_POT)
        fh.write(struct.pack("<QQQ", n, 6, values.size * 8))
        fh.write(values.tobytes())


def load_table(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC_POT:
            raise PotentialError("bad potential table magic %r" % magic)
        n, dims, payload = struct.unpack("<QQQ", fh.read(24))
        if dims != 6:
            raise PotentialError("potential table dims must be 6, got %d" % dims)
        if payload != n**6 * 8:
            raise PotentialError("potential table payload length mismatch")
        data = np.frombuffer(fh.read(payload), dtype="<f8")
    return data.reshape((n,) * 6).copy()


def table_profile(values: np.ndarray, half_width: float) -> Callable[[np.ndarray], np.ndarray]:
    """Multilinear interpolant of an n^6 table spanning [-half_width, half_width]^6.

    Node j sits at the midpoint of cell j; values are clamped to zero outside.
    """
    n = values.shape[0]
    h = 2.0 * half_width / n

    def interp(points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        # fractional node coordinates
        g = (points + half_width) / h - 0.5
        g0 = np.floor(g).astype(np.int64)
        frac = g - g0
        out = np.zeros(points.shape[0])
        for corner in range(64):
            offs = [(corner >> d) & 1 for d in range(6)]
            idx = g0 + np.array(offs)
            inside = np.all((idx >= 0) & (idx < n), axis=1)
            if not np.any(inside):
                continue
            w = np.ones(inside.sum())
            for d in range(6):
                fd = frac[inside, d]
                w *= fd if offs[d] else (1.0 - fd)
            flat = np.ravel_multi_index(tuple(idx[inside].T), values.shape)
            out[inside] += w * values.ravel()[flat]
        return out

    return interp


def from_config(items: dict) -> PotentialModel:
    """Build a potential from a parsed [potential] config section."""
    profile = items.get("profile", "bump")
    lam = float(items.get("lambda", 1.0))
    if profile == "bump":
        base_radius = float(items.get("support_radius", 1.0))
        return default_bump(coupling=lam, base_radius=base_radius)
    if profile == "table":
        path = items.get("table_path")
        if not path:
            raise PotentialError("table profile requires table_path")
        radius = float(items.get("support_radius", 1.0))
        values = load_table(path)
        if np.any(values < 0):
            raise PotentialError("table potential has negative entries")
        warnings.warn("tabulated potential: smoothness cannot be verified, proceeding",
                      RuntimeWarning)
        prof = table_profile(values, radius)
        return symmetrize(prof, radius * math.sqrt(6.0) * 1.0001, coupling=lam, name="table")
    raise PotentialError("unknown potential profile %r" % profile)
