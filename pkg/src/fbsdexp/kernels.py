"""Backend selection for the hot loops.

The compiled Cython module is used when it was built; otherwise, or when the
environment variable ``FBSDEXP_PURE_PYTHON`` is set to a non-empty value,
the numpy implementations are used.
"""

import os

from . import _pykernels

try:
    if os.environ.get("FBSDEXP_PURE_PYTHON"):
        raise ImportError("pure python backend requested")
    from . import _ckernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"

rk4_linear_terminal = _impl.rk4_linear_terminal
flows_euler = _impl.flows_euler

__all__ = ["BACKEND", "rk4_linear_terminal", "flows_euler"]
