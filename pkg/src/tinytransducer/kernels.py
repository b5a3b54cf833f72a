"""Kernel dispatch: the compiled extension when importable, else pure Python.

Set ``TINYTRANSDUCER_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _kernels_py

OP_HIT, OP_SUB, OP_DEL, OP_INS = (
    _kernels_py.OP_HIT,
    _kernels_py.OP_SUB,
    _kernels_py.OP_DEL,
    _kernels_py.OP_INS,
)

_impl = _kernels_py
BACKEND = "python"
if os.environ.get("TINYTRANSDUCER_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def edit_align(ref, hyp):
    """Return ``(distance, ops)`` for unit-cost Levenshtein alignment.

    ``ops`` lists op codes in reference order; backtrace ties prefer
    hit, then substitution, deletion, insertion.
    """
    if _impl is _kernels_py:
        return _impl.edit_align(ref, hyp)
    return _impl.edit_align(
        np.ascontiguousarray(ref, dtype=np.int64), np.ascontiguousarray(hyp, dtype=np.int64)
    )


def scatter_add_rows(dest: np.ndarray, index: np.ndarray, src: np.ndarray) -> None:
    """In place: ``dest[index[r]] += src[r]`` with duplicate indices accumulated."""
    if dest.dtype != np.float32:
        _kernels_py.scatter_add_rows(dest, np.asarray(index, dtype=np.int64), np.asarray(src, dtype=dest.dtype))
        return
    _impl.scatter_add_rows(dest, np.ascontiguousarray(index, dtype=np.int64),
                           np.ascontiguousarray(src, dtype=np.float32))
