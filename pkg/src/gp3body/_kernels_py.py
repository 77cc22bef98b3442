"""Pure-numpy fallback for the pairwise kernel sums.

Same contract as the compiled extension: chunked over targets so the
T x S distance matrix never materializes in full.  Squared distances come
from the |t|^2 + |s|^2 - 2 t.s expansion, which turns the inner work into
BLAS calls.
"""

import numpy as np

_CHUNK = 512


def backend_name():
    return "python"


def _sum_inv_pow(targets, sources, dens, self_idx, power, workers):
    # workers is accepted for API parity; BLAS threading is ambient.
    T = targets.shape[0]
    out = np.zeros((T, dens.shape[1]), dtype=np.float64)
    s_sq = np.einsum("ij,ij->i", sources, sources)
    for lo in range(0, T, _CHUNK):
        hi = min(lo + _CHUNK, T)
        tc = targets[lo:hi]
        q = np.maximum(
            np.einsum("ij,ij->i", tc, tc)[:, None] + s_sq[None, :] - 2.0 * (tc @ sources.T),
            0.0,
        )
        if power == 4:
            with np.errstate(divide="ignore"):
                k = 1.0 / (q * q)
        else:
            with np.errstate(divide="ignore"):
                k = q * q * q * np.sqrt(q)
                k = 1.0 / k
        if self_idx is not None:
            mask = self_idx[lo:hi] >= 0
            k[np.nonzero(mask)[0], self_idx[lo:hi][mask]] = 0.0
        out[lo:hi] = k @ dens
    return out


def sum_inv_r4_6d(targets, sources, dens, self_idx=None, workers=1):
    """out[t,r] = sum_s dens[s,r] / |targets[t]-sources[s]|^4, skipping s == self_idx[t]."""
    if targets.shape[1] != 6 or sources.shape[1] != 6:
        raise ValueError("expected 6-dimensional points")
    if dens.shape[0] != sources.shape[0]:
        raise ValueError("density rows must match source count")
    return _sum_inv_pow(targets, sources, dens, self_idx, 4, workers)


def sum_inv_r7_9d(targets, sources, dens, self_idx=None, workers=1):
    """out[t,r] = sum_s dens[s,r] / |targets[t]-sources[s]|^7, skipping s == self_idx[t]."""
    if targets.shape[1] != 9 or sources.shape[1] != 9:
        raise ValueError("expected 9-dimensional points")
    if dens.shape[0] != sources.shape[0]:
        raise ValueError("density rows must match source count")
    return _sum_inv_pow(targets, sources, dens, self_idx, 7, workers)
