"""Kernel backend selection.

Imports the compiled extension when available; otherwise (or when
GRIPSTAB_PURE=1 is set) falls back to the pure-numpy implementations.
Both expose the same functions with bit-identical results.
"""

from __future__ import annotations

import os

from . import kernels_py

_FORCE_PURE = os.environ.get("GRIPSTAB_PURE", "") == "1"
_impl = kernels_py
_BACKEND = "pure"

if not _FORCE_PURE:
    try:
        from . import _kernels as _ext
    except ImportError:
        _ext = None
    if _ext is not None:
        _impl = _ext
        _BACKEND = "compiled"


def backend() -> str:
    """Active kernel backend: 'compiled' or 'pure'."""
    return _BACKEND


im2col = _impl.im2col
col2im = _impl.col2im
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward
