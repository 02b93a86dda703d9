"""Backend selection for the hot kernels.

The compiled extension is preferred when it built successfully; the pure
numpy fallback is always available. Set ROBAYES_PURE=1 to force the
fallback (used by the kernel benchmark to compare both).
"""

import os

from . import _core_py

if os.environ.get("ROBAYES_PURE"):
    _impl = _core_py
    BACKEND = "python"
else:
    try:
        from . import _core as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = _core_py
        BACKEND = "python"

jacobi_eigh = _impl.jacobi_eigh
mean_filter = _impl.mean_filter
FILTER_OK = _core_py.FILTER_OK
FILTER_BUDGET = _core_py.FILTER_BUDGET
FILTER_MAXITER = _core_py.FILTER_MAXITER
