"""Hot kernels with a compiled backend and a numpy fallback.

The compiled module is used when it was built and ``RESTOREFORMER_PURE_PYTHON``
is unset; :func:`use_backend` switches at runtime (benchmarks, equivalence
tests).
"""
import os

import numpy as np

from . import _fallback

try:
    if os.environ.get("RESTOREFORMER_PURE_PYTHON"):
        raise ImportError("pure-python backend requested")
    from . import _native
except ImportError:
    _native = None

_impl = _native if _native is not None else _fallback
BACKEND = "native" if _native is not None else "python"


def available_backends():
    return ["python"] + (["native"] if _native is not None else [])


def use_backend(name):
    """Select ``"native"`` or ``"python"``; returns the previous backend name."""
    global _impl, BACKEND
    if name == "native" and _native is None:
        raise RuntimeError("compiled kernels are not built (pip install -e . --no-build-isolation)")
    if name not in ("native", "python"):
        raise ValueError(f"unknown backend {name!r}")
    prev = BACKEND
    _impl = _native if name == "native" else _fallback
    BACKEND = name
    return prev


def im2col(xp, kh, kw, stride):
    return _impl.im2col(np.ascontiguousarray(xp, dtype=np.float64), kh, kw, stride)


def col2im(cols, hp, wp, kh, kw, stride):
    return _impl.col2im(np.ascontiguousarray(cols, dtype=np.float64), hp, wp, kh, kw, stride)


def nearest_code(z, book, book_sq):
    return _impl.nearest_code(
        np.ascontiguousarray(z, dtype=np.float64),
        np.ascontiguousarray(book, dtype=np.float64),
        np.ascontiguousarray(book_sq, dtype=np.float64),
    )


def group_norm_fwd(x, groups, eps):
    return _impl.group_norm_fwd(np.ascontiguousarray(x, dtype=np.float64), groups, eps)


def group_norm_bwd(gxh, xhat, inv, groups):
    return _impl.group_norm_bwd(
        np.ascontiguousarray(gxh, dtype=np.float64),
        np.ascontiguousarray(xhat, dtype=np.float64),
        np.ascontiguousarray(inv, dtype=np.float64),
        groups,
    )
