# cython: language_level=3
"""Compiled versions of the hot kernels (see ``_fallback.py`` for the contract)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cdef double TIE_TOL = 1e-10

cnp.import_array()


def im2col(double[:, :, :, ::1] xp, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride):
    cdef Py_ssize_t B = xp.shape[0], Hp = xp.shape[1], Wp = xp.shape[2], C = xp.shape[3]
    cdef Py_ssize_t Ho = (Hp - kh) // stride + 1
    cdef Py_ssize_t Wo = (Wp - kw) // stride + 1
    cdef Py_ssize_t K = kh * kw * C
    out = np.empty((B, Ho, Wo, K), dtype=np.float64)
    cdef double[:, :, :, ::1] cols = out
    cdef Py_ssize_t b, y, x, i, j, c, base
    with nogil:
        for b in range(B):
            for y in range(Ho):
                for x in range(Wo):
                    for i in range(kh):
                        for j in range(kw):
                            base = (i * kw + j) * C
                            for c in range(C):
                                cols[b, y, x, base + c] = xp[b, y * stride + i, x * stride + j, c]
    return out


def col2im(double[:, :, :, ::1] cols, Py_ssize_t hp, Py_ssize_t wp,
           Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride):
    cdef Py_ssize_t B = cols.shape[0], Ho = cols.shape[1], Wo = cols.shape[2]
    cdef Py_ssize_t C = cols.shape[3] // (kh * kw)
    out = np.zeros((B, hp, wp, C), dtype=np.float64)
    cdef double[:, :, :, ::1] img = out
    cdef Py_ssize_t b, y, x, i, j, c, base
    # (i, j) outermost: same per-pixel summation order as the numpy fallback
    with nogil:
        for i in range(kh):
            for j in range(kw):
                base = (i * kw + j) * C
                for b in range(B):
                    for y in range(Ho):
                        for x in range(Wo):
                            for c in range(C):
                                img[b, y * stride + i, x * stride + j, c] += cols[b, y, x, base + c]
    return out


def nearest_code(double[:, ::1] z, double[:, ::1] book, double[::1] book_sq):
    cdef Py_ssize_t N = z.shape[0], C = z.shape[1], M = book.shape[0]
    idx_arr = np.empty(N, dtype=np.int64)
    # screening inner products go through BLAS, like the fallback
    cdef double[:, ::1] zb = np.ascontiguousarray(np.asarray(z) @ np.asarray(book).T)
    cdef cnp.int64_t[::1] idx = idx_arr
    cdef Py_ssize_t n, m, c, best
    cdef double zz, d, t, diff, best_d, max_sq = 0.0
    for m in range(M):
        if book_sq[m] > max_sq:
            max_sq = book_sq[m]
    with nogil:
        for n in range(N):
            zz = 0.0
            for c in range(C):
                zz += z[n, c] * z[n, c]
            best = 0
            best_d = 0.0
            for m in range(M):
                d = zz - 2.0 * zb[n, m] + book_sq[m]
                if m == 0 or d < best_d:
                    best_d = d
                    best = m
            # settle near-ties with the direct sequential distance
            t = best_d + TIE_TOL * (zz + max_sq + 1.0)
            best_d = -1.0
            for m in range(M):
                if zz - 2.0 * zb[n, m] + book_sq[m] <= t:
                    d = 0.0
                    for c in range(C):
                        diff = z[n, c] - book[m, c]
                        d += diff * diff
                    if best_d < 0.0 or d < best_d:
                        best_d = d
                        best = m
            idx[n] = best
    return idx_arr


def group_norm_fwd(double[:, :, :, ::1] x, Py_ssize_t groups, double eps):
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3]
    cdef Py_ssize_t cg = C // groups
    cdef Py_ssize_t P = H * W
    out = np.empty((B, H, W, C), dtype=np.float64)
    inv_arr = np.empty((B, groups), dtype=np.float64)
    cdef double[:, ::1] xf = np.asarray(x).reshape(B, P * C)
    cdef double[:, ::1] of = out.reshape(B, P * C)
    cdef double[:, ::1] inv = inv_arr
    cdef Py_ssize_t b, g, p, c, off
    cdef double s, mu, d, var, iv, n = <double>(P * cg)
    with nogil:
        for b in range(B):
            for g in range(groups):
                off = g * cg
                s = 0.0
                for p in range(P):
                    for c in range(cg):
                        s += xf[b, p * C + off + c]
                mu = s / n
                s = 0.0
                for p in range(P):
                    for c in range(cg):
                        d = xf[b, p * C + off + c] - mu
                        s += d * d
                var = s / n
                iv = 1.0 / sqrt(var + eps)
                inv[b, g] = iv
                for p in range(P):
                    for c in range(cg):
                        of[b, p * C + off + c] = (xf[b, p * C + off + c] - mu) * iv
    return out, inv_arr


def group_norm_bwd(double[:, :, :, ::1] gxh, double[:, :, :, ::1] xhat,
                   double[:, ::1] inv, Py_ssize_t groups):
    cdef Py_ssize_t B = xhat.shape[0], H = xhat.shape[1], W = xhat.shape[2], C = xhat.shape[3]
    cdef Py_ssize_t cg = C // groups
    cdef Py_ssize_t P = H * W
    out = np.empty((B, H, W, C), dtype=np.float64)
    cdef double[:, ::1] gf = np.asarray(gxh).reshape(B, P * C)
    cdef double[:, ::1] xf = np.asarray(xhat).reshape(B, P * C)
    cdef double[:, ::1] of = out.reshape(B, P * C)
    cdef Py_ssize_t b, g, p, c, off, k
    cdef double sg, sgx, iv, n = <double>(P * cg)
    with nogil:
        for b in range(B):
            for g in range(groups):
                off = g * cg
                sg = 0.0
                sgx = 0.0
                for p in range(P):
                    for c in range(cg):
                        k = p * C + off + c
                        sg += gf[b, k]
                        sgx += gf[b, k] * xf[b, k]
                sg /= n
                sgx /= n
                iv = inv[b, g]
                for p in range(P):
                    for c in range(cg):
                        k = p * C + off + c
                        of[b, k] = iv * (gf[b, k] - sg - xf[b, k] * sgx)
    return out
