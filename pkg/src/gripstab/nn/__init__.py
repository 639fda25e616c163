"""Minimal NCHW neural-network engine on numpy.

Convolutions run as im2col + BLAS matrix products; the gather/scatter
kernels (im2col, col2im, max pooling) exist twice, as a compiled extension
and as a pure-numpy fallback, selected at import time.
"""

from .kernels import backend
from .network import Network

__all__ = ["Network", "backend"]
