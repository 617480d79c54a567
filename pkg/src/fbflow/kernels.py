"""Kernel selection: compiled extension when available, numpy otherwise.

Set FBFLOW_PURE=1 to force the numpy path.
"""

import math
import os

import numpy as np

from . import _fallback

BACKEND = "numpy"
_impl = _fallback

if os.environ.get("FBFLOW_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "compiled"


def use_backend(name: str) -> None:
    """Switch backends at runtime ('compiled' or 'numpy'); used by the benchmark."""
    global _impl, BACKEND
    if name == "numpy":
        _impl, BACKEND = _fallback, "numpy"
    elif name == "compiled":
        from . import _kernels as _compiled
        _impl, BACKEND = _compiled, "compiled"
    else:
        raise ValueError(f"unknown backend {name!r}")


def _c(a):
    return None if a is None else np.ascontiguousarray(a, dtype=float)


def energy_cells(u, pc, ac, h, quadratic=False, workers=1):
    return np.asarray(_impl.energy_cells(_c(u), _c(pc), _c(ac), tuple(h), bool(quadratic), int(workers)))


def smooth_energy(u, pc, ac, h, quadratic=False, workers=1):
    return math.fsum(energy_cells(u, pc, ac, h, quadratic, workers).ravel())


def smooth_gradient(u, pc, ac, src, h, delta, quadratic=False, workers=1):
    return np.asarray(_impl.smooth_gradient(_c(u), _c(pc), _c(ac), _c(src), tuple(h), float(delta),
                                            bool(quadratic), int(workers)))
