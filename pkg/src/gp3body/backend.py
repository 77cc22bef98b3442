"""Kernel backend selection.

The compiled extension is preferred; the numpy implementation is the
fallback when the extension is missing or when GP3_FORCE_PYTHON is set.
Both expose sum_inv_r4_6d / sum_inv_r7_9d with identical semantics.
"""

import os
import warnings

if os.environ.get("GP3_FORCE_PYTHON", ""):
    from . import _kernels_py as kernels
else:
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as kernels

        warnings.warn(
            "gp3body._kernels extension not built; using the slower numpy fallback",
            RuntimeWarning,
        )

sum_inv_r4_6d = kernels.sum_inv_r4_6d
sum_inv_r7_9d = kernels.sum_inv_r7_9d
backend_name = kernels.backend_name


def default_workers() -> int:
    """Worker count: GP3_WORKERS env var, else the machine's CPU count."""
    env = os.environ.get("GP3_WORKERS", "")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)
