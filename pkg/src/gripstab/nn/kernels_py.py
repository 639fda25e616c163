"""Pure-numpy reference kernels: im2col/col2im and max pooling.

Bit-compatible with the compiled versions in _kernels.pyx; every function
accepts C-contiguous float32 or float64 arrays.
"""

from __future__ import annotations

import numpy as np


def im2col(
    xp: np.ndarray, kh: int, kw: int, sh: int, sw: int, oh: int, ow: int
) -> np.ndarray:
    """Gather conv patches of a padded NCHW tensor into a (C*kh*kw, B*oh*ow)
    matrix, laid out for a single weight-matrix GEMM.

    The input must already be padded: all windows lie fully inside it.
    """
    if (oh - 1) * sh + kh > xp.shape[2] or (ow - 1) * sw + kw > xp.shape[3]:
        raise ValueError("im2col: windows exceed the padded input")
    b, c, _, _ = xp.shape
    cols = np.empty((c, kh, kw, b, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            window = xp[:, :, i : i + sh * (oh - 1) + 1 : sh,
                        j : j + sw * (ow - 1) + 1 : sw]
            cols[:, i, j] = window.transpose(1, 0, 2, 3)
    return np.ascontiguousarray(cols.reshape(c * kh * kw, b * oh * ow))


def col2im(
    cols: np.ndarray,
    b: int, c: int, hp: int, wp: int,
    kh: int, kw: int, sh: int, sw: int, oh: int, ow: int,
) -> np.ndarray:
    """Scatter-add the transpose of im2col: patch matrix back to the padded
    input tensor."""
    if (oh - 1) * sh + kh > hp or (ow - 1) * sw + kw > wp:
        raise ValueError("col2im: windows exceed the padded input")
    c6 = cols.reshape(c, kh, kw, b, oh, ow)
    xg = np.zeros((b, c, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xg[:, :, i : i + sh * (oh - 1) + 1 : sh,
               j : j + sw * (ow - 1) + 1 : sw] += c6[:, i, j].transpose(1, 0, 2, 3)
    return xg


def maxpool_forward(
    x: np.ndarray, kh: int, kw: int, sh: int, sw: int, oh: int, ow: int
) -> tuple[np.ndarray, np.ndarray]:
    """Ceil-mode max pooling: edge windows are clipped to the input.

    Returns (pooled, argmax) where argmax holds flat h*W+w input indices;
    ties resolve to the first window position in (kh, kw) scan order.
    """
    b, c, h, w = x.shape
    hp = (oh - 1) * sh + kh
    wp = (ow - 1) * sw + kw
    if hp > h or wp > w:
        xp = np.full((b, c, hp, wp), -np.inf, dtype=x.dtype)
        xp[:, :, :h, :w] = x
    else:
        xp = x
    cand = np.empty((kh * kw, b, c, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cand[i * kw + j] = xp[:, :, i : i + sh * (oh - 1) + 1 : sh,
                                  j : j + sw * (ow - 1) + 1 : sw]
    k_best = cand.argmax(axis=0)
    out = np.take_along_axis(cand, k_best[None], axis=0)[0]
    ki, kj = k_best // kw, k_best % kw
    hh = (np.arange(oh) * sh)[None, None, :, None] + ki
    ww = (np.arange(ow) * sw)[None, None, None, :] + kj
    idx = (hh * w + ww).astype(np.int32)
    return np.ascontiguousarray(out), np.ascontiguousarray(idx)


def maxpool_backward(
    g: np.ndarray, idx: np.ndarray, h: int, w: int, kh: int, kw: int,
    sh: int, sw: int,
) -> np.ndarray:
    """Route pooled gradients back to the argmax input positions.

    Accumulates in the gradient's own dtype and in window scan order, so
    results match the compiled kernel bit for bit.
    """
    b, c, oh, ow = g.shape
    offsets = (np.arange(b * c, dtype=np.int64) * (h * w)).reshape(b, c, 1)
    flat = idx.reshape(b, c, oh * ow).astype(np.int64) + offsets
    gx = np.zeros(b * c * h * w, dtype=g.dtype)
    if kh <= sh and kw <= sw:
        # Disjoint windows: each input position receives at most one term.
        gx[flat.ravel()] = g.ravel()
    else:
        np.add.at(gx, flat.ravel(), g.ravel())
    return gx.reshape(b, c, h, w)
