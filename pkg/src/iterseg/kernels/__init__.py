"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

Backend selection is driven by the ITERSEG_KERNELS environment variable,
read once at import time:

    auto   prefer numba, silently fall back to numpy if it is missing
    numba  require numba, fail loudly if it cannot be imported
    numpy  force the pure-numpy implementations

Both backends implement the same functions with identical semantics.
The bilinear interpolation uses the same lerp expression in both so the
forward pass is bitwise identical across backends; convolution results
may differ by accumulation order at the level of float rounding.
"""

from __future__ import annotations

import os

import numpy as np

from ..errors import ConfigError
from . import numpy_impl

_REQUESTED = os.environ.get("ITERSEG_KERNELS", "auto").strip().lower() or "auto"
if _REQUESTED not in ("auto", "numba", "numpy"):
    raise ConfigError(
        f"ITERSEG_KERNELS must be one of auto/numba/numpy, got {_REQUESTED!r}"
    )

if _REQUESTED == "numpy":
    _impl = numpy_impl
else:
    try:
        from . import numba_impl as _impl  # type: ignore[no-redef]
    except ImportError:
        if _REQUESTED == "numba":
            raise ConfigError(
                "ITERSEG_KERNELS=numba was requested but numba is not importable"
            )
        _impl = numpy_impl


def backend_name() -> str:
    """Name of the active kernel backend, 'numba' or 'numpy'."""
    return _impl.BACKEND_NAME


def bilinear_coords(in_size: int, out_size: int):
    """Source coordinates for a half-pixel-centred bilinear resize.

    Output pixel i samples input position (i + 0.5) * in/out - 0.5,
    clamped to the valid range. Returns (lo, hi, frac) index and weight
    arrays of length out_size; hi == lo at clamped borders.
    """
    pos = (np.arange(out_size, dtype=np.float64) + 0.5) * (in_size / out_size) - 0.5
    pos = np.clip(pos, 0.0, float(in_size - 1))
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = pos - lo
    return lo, hi, frac


conv2d_forward = _impl.conv2d_forward
conv2d_backward_kernel = _impl.conv2d_backward_kernel
conv2d_backward_input = _impl.conv2d_backward_input
bilinear_forward = _impl.bilinear_forward
bilinear_transpose = _impl.bilinear_transpose
slic_assign = _impl.slic_assign
