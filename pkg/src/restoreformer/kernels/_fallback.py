"""Pure numpy versions of the hot kernels.

Accumulation orders match ``_native.pyx`` exactly, so both backends give
bit-identical im2col/col2im results.
"""
import numpy as np


def im2col(xp, kh, kw, stride):
    """(B, Hp, Wp, C) padded input -> (B, Ho, Wo, kh*kw*C) patch matrix."""
    B, Hp, Wp, C = xp.shape
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    cols = np.empty((B, Ho, Wo, kh, kw, C), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i:i + stride * (Ho - 1) + 1:stride,
                                        j:j + stride * (Wo - 1) + 1:stride, :]
    return cols.reshape(B, Ho, Wo, kh * kw * C)


def col2im(cols, hp, wp, kh, kw, stride):
    """Adjoint of :func:`im2col`: scatter-add patches back to (B, hp, wp, C)."""
    B, Ho, Wo, K = cols.shape
    C = K // (kh * kw)
    c6 = cols.reshape(B, Ho, Wo, kh, kw, C)
    out = np.zeros((B, hp, wp, C), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            out[:, i:i + stride * (Ho - 1) + 1:stride,
                j:j + stride * (Wo - 1) + 1:stride, :] += c6[:, :, :, i, j, :]
    return out


TIE_TOL = 1e-10


def nearest_code(z, book, book_sq):
    """Nearest codebook row per input row; ties go to the lowest index.

    Expanded-form distances screen the candidates; rows whose best candidates
    lie within rounding distance of each other are settled by the direct
    distance summed sequentially over channels.
    """
    zz = np.einsum("ij,ij->i", z, z)
    d = zz[:, None] - 2.0 * (z @ book.T) + book_sq[None, :]
    best = d.min(axis=1)
    tol = TIE_TOL * (zz + book_sq.max() + 1.0)
    cand = d <= (best + tol)[:, None]
    idx = np.argmax(cand, axis=1).astype(np.int64)
    for n in np.nonzero(cand.sum(axis=1) > 1)[0]:
        ms = np.nonzero(cand[n])[0]
        acc = np.zeros(ms.size)
        for c in range(z.shape[1]):
            t = z[n, c] - book[ms, c]
            acc += t * t
        idx[n] = ms[np.argmin(acc)]
    return idx


def group_norm_fwd(x, groups, eps):
    """NHWC group normalisation without affine terms -> (xhat, inv_std (B, G))."""
    B, H, W, C = x.shape
    x5 = x.reshape(B, H * W, groups, C // groups)
    mu = x5.mean(axis=(1, 3), keepdims=True)
    xc = x5 - mu
    var = (xc * xc).mean(axis=(1, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    return (xc * inv).reshape(B, H, W, C), inv.reshape(B, groups)


def group_norm_bwd(gxh, xhat, inv, groups):
    """Gradient w.r.t. the input given the gradient w.r.t. ``xhat``."""
    B, H, W, C = xhat.shape
    g5 = gxh.reshape(B, H * W, groups, C // groups)
    x5 = xhat.reshape(B, H * W, groups, C // groups)
    gm = g5.mean(axis=(1, 3), keepdims=True)
    gxm = (g5 * x5).mean(axis=(1, 3), keepdims=True)
    gx = inv.reshape(B, 1, groups, 1) * (g5 - gm - x5 * gxm)
    return gx.reshape(B, H, W, C)
