"""Selects the compiled kernels when available, the numpy versions otherwise.

Set ``RADARDEPTH_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _fallback

fallback = _fallback
compiled = None
if os.environ.get("RADARDEPTH_PURE_PYTHON") != "1":
    try:
        from . import _kernels as compiled
    except ImportError:  # extension not built
        compiled = None

kernels = compiled if compiled is not None else fallback
BACKEND = "cython" if compiled is not None else "python"


def available() -> dict:
    """Name -> kernel module for every importable backend."""
    out = {"python": fallback}
    if compiled is not None:
        out["cython"] = compiled
    return out
