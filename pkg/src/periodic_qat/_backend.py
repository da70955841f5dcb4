"""Kernel backend selection.

The compiled extension is used when it was built; otherwise the numpy
fallback is loaded. ``PERIODIC_QAT_BACKEND`` (``auto``, ``cython``,
``python``) overrides the choice at import time, and :func:`set_backend`
switches it at runtime. Both backends produce bit-identical results.
"""

import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

kernels = _pykernels


def available():
    names = ["python"]
    if _ckernels is not None:
        names.insert(0, "cython")
    return names


def set_backend(name):
    global kernels
    if name == "auto":
        kernels = _ckernels if _ckernels is not None else _pykernels
    elif name == "cython":
        if _ckernels is None:
            raise ImportError("compiled kernels are not built; reinstall with Cython available")
        kernels = _ckernels
    elif name == "python":
        kernels = _pykernels
    else:
        raise ValueError(f"unknown backend {name!r}")
    return kernels


def current():
    return kernels.NAME


set_backend(os.environ.get("PERIODIC_QAT_BACKEND", "auto"))
