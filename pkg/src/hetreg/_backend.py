"""Select the kernel implementation at import time.

The compiled ``_kernels`` extension is used when it was built; otherwise the
numpy module ``_kernels_py`` takes over. Setting ``HETREG_PURE_PYTHON=1``
forces the fallback.
"""
import importlib
import os

from . import _kernels_py


def _load_compiled():
    try:
        return importlib.import_module("hetreg._kernels")
    except ImportError:
        return None


_compiled = _load_compiled()

if _compiled is not None and os.environ.get("HETREG_PURE_PYTHON", "") not in ("1", "true", "yes"):
    kernels = _compiled
else:
    kernels = _kernels_py

BACKEND = kernels.NAME


def available_backends():
    """Names of the kernel implementations importable in this process."""
    names = ["python"]
    if _compiled is not None:
        names.insert(0, "cython")
    return names


def get_kernels(name):
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built; run `pip install -e .`")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
