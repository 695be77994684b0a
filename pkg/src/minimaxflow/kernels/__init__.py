"""Closed-loop tick kernels.

The compiled extension is used when it was built; otherwise, or when the
environment variable ``MINIMAXFLOW_PURE_PYTHON`` is set to a non-empty value
other than ``0``, the numpy reference implementation is selected.
"""

import os

from . import _pykernel

python_backend = _pykernel

try:
    from . import _ckernel as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and os.environ.get("MINIMAXFLOW_PURE_PYTHON", "0") in ("", "0"):
    backend = compiled_backend
    BACKEND = "cython"
else:
    backend = python_backend
    BACKEND = "python"


def get_backend(name=None):
    """Return the kernel module called ``name`` ("cython" or "python"), or the active one."""
    if name is None:
        return backend
    if name == "python":
        return python_backend
    if name == "cython":
        if compiled_backend is None:
            raise ImportError("compiled kernel is not built; run `pip install -e . --no-build-isolation`")
        return compiled_backend
    raise ValueError(f"unknown backend {name!r}")


__all__ = ["BACKEND", "backend", "compiled_backend", "python_backend", "get_backend"]
