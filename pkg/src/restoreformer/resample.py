"""Bilinear resampling with half-pixel-centre alignment.

Output pixel ``i`` of an ``n_out``-pixel axis covering source span
``[lo, hi)`` (in pixels) samples source coordinate
``lo + (i + 0.5) * (hi - lo) / n_out - 0.5``, clamped to ``[0, n_in - 1]``.
Worked example, 4 -> 2 pixels over the full axis: outputs sample 0.5 and 2.5,
i.e. the means of pixels (0, 1) and (2, 3).
"""
import numpy as np


def bilinear_matrix(n_in, n_out, lo=0.0, hi=None):
    """(n_out, n_in) interpolation matrix; rows sum to 1."""
    if hi is None:
        hi = float(n_in)
    if n_out < 1 or hi <= lo:
        raise ValueError(f"degenerate resample span [{lo}, {hi}) -> {n_out}")
    src = lo + (np.arange(n_out) + 0.5) * (hi - lo) / n_out - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    return m


def resize(img, out_h, out_w):
    """Resize (..., H, W, C) numpy images."""
    H, W = img.shape[-3], img.shape[-2]
    ry = bilinear_matrix(H, out_h)
    rx = bilinear_matrix(W, out_w)
    return np.einsum("ih,...hwc,jw->...ijc", ry, img, rx, optimize=True)
