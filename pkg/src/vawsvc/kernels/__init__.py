"""DTW kernels: compiled Cython extension with a pure-Python fallback.

The extension is used when it was built at install time. Setting
``VAWSVC_PURE_PYTHON=1`` forces the fallback. ``BACKEND`` names the active
implementation.
"""
import os

from . import _dtw_py as python_backend

compiled_backend = None
if os.environ.get("VAWSVC_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _dtw as compiled_backend
    except ImportError:
        compiled_backend = None

if compiled_backend is not None:
    accumulated_cost = compiled_backend.accumulated_cost
    backtrack = compiled_backend.backtrack
    BACKEND = "cython"
else:
    accumulated_cost = python_backend.accumulated_cost
    backtrack = python_backend.backtrack
    BACKEND = "python"

__all__ = ["accumulated_cost", "backtrack", "BACKEND", "python_backend", "compiled_backend"]
