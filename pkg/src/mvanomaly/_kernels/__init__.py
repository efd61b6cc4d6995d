"""Render kernels: compiled extension when available, numpy fallback otherwise.

Set MVANOMALY_PURE_PYTHON=1 to force the fallback. Both implementations
produce bit-identical outputs; the compiled one is just faster.
"""

from __future__ import annotations

import os

from . import numpy_impl

if os.environ.get("MVANOMALY_PURE_PYTHON"):
    _impl = numpy_impl
    BACKEND = "numpy"
else:
    try:
        from . import _render as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = numpy_impl
        BACKEND = "numpy"

splat_zbuffer = _impl.splat_zbuffer
accumulate_means = _impl.accumulate_means

__all__ = ["splat_zbuffer", "accumulate_means", "BACKEND", "numpy_impl"]
