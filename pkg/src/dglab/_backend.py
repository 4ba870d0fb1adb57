"""Kernel backend selection.

The compiled extension is used when it imports; setting ``DGLAB_PURE_PYTHON=1``
forces the numpy fallback. ``BACKEND`` names the active choice.
"""
import os

from . import _fallback

_compiled = None
if not os.environ.get("DGLAB_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
kernels = _compiled if _compiled is not None else _fallback


def available_backends():
    return ["cython", "python"] if _compiled is not None else ["python"]


def get_kernels(name=None):
    """Return the kernel module for ``name`` ("cython" or "python"), default active."""
    if name is None:
        return kernels
    if name == "python":
        return _fallback
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
