"""Differentiable primitives.

Layouts: images and feature maps are NHWC ``(B, H, W, C)``; conv weights are
``(kh, kw, C_in, C_out)``. Each op returns a new :class:`Tensor`; backward
closures return one gradient (or ``None``) per parent.
"""
import builtins

import numpy as np

from .. import kernels
from .core import ShapeError, Tensor, as_tensor, make_result


def _unbroadcast(g, shape):
    if g.shape == tuple(shape):
        return g
    nd = g.ndim - len(shape)
    if nd > 0:
        g = g.sum(axis=tuple(range(nd)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return make_result(a.data + b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return make_result(a.data - b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return make_result(ad * bd, (a, b), bw, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return (_unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None)

    return make_result(out, (a, b), bw, "div")


def scale(a, s):
    s = float(s)
    return make_result(a.data * s, (a,), lambda g: (g * s,), "scale")


def relu(x):
    mask = x.data > 0  # gradient at exactly 0 is 0
    return make_result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def _sigmoid(v):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def sigmoid(x):
    s = _sigmoid(x.data)
    return make_result(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def silu(x):
    s = _sigmoid(x.data)
    xd = x.data
    return make_result(xd * s, (x,), lambda g: (g * (s * (1.0 + xd * (1.0 - s))),), "silu")


def tanh(x):
    t = np.tanh(x.data)
    return make_result(t, (x,), lambda g: (g * (1.0 - t * t),), "tanh")


def log_sigmoid(x):
    """log(sigmoid(x)) evaluated without forming sigmoid."""
    xd = x.data
    out = np.minimum(xd, 0.0) - np.log1p(np.exp(-np.abs(xd)))
    return make_result(out, (x,), lambda g: (g * _sigmoid(-xd),), "log_sigmoid")


def abs(x):
    sgn = np.sign(x.data)
    return make_result(np.abs(x.data), (x,), lambda g: (g * sgn,), "abs")


def log(x):
    xd = x.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(xd)
    return make_result(out, (x,), lambda g: (g / xd,), "log")


def exp(x):
    out = np.exp(x.data)
    return make_result(out, (x,), lambda g: (g * out,), "exp")


def sqrt(x):
    with np.errstate(invalid="ignore"):
        out = np.sqrt(x.data)
    return make_result(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def square(x):
    xd = x.data
    return make_result(xd * xd, (x,), lambda g: (2.0 * g * xd,), "square")


def stop_gradient(x):
    """sg[x]: same value, never recorded."""
    return Tensor._wrap(x.data)


def straight_through(z_h, z_p):
    """Forward value of ``z_p``; gradient passes to ``z_h`` unchanged, none to ``z_p``."""
    if z_h.shape != z_p.shape:
        raise ShapeError("straight_through", z_h.shape, z_p.shape)
    return make_result(z_p.data.copy(), (z_h,), lambda g: (g,), "straight_through")


# ---------------------------------------------------------------- linear algebra

def matmul(a, b):
    """Batched matmul over leading dims (both operands at least 2-D)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape, detail="batch dims") from None
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_result(ad @ bd, (a, b), bw, "matmul")


def conv2d(x, w, b=None, stride=1, pad=0):
    """NHWC convolution (cross-correlation), zero padding."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ShapeError("conv2d", x.shape, w.shape)
    if b is not None and b.shape != (w.shape[3],):
        raise ShapeError("conv2d", w.shape, b.shape, detail="bias")
    B, H, W, Cin = x.shape
    kh, kw, _, Cout = w.shape
    Hp, Wp = H + 2 * pad, W + 2 * pad
    if Hp < kh or Wp < kw:
        raise ShapeError("conv2d", x.shape, w.shape, detail="kernel larger than padded input")
    wd = w.data
    if kh == 1 and kw == 1 and stride == 1 and pad == 0:
        cols = x.data.reshape(-1, Cin)
        Ho, Wo = H, W
    else:
        xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x.data
        cols4 = kernels.im2col(xp, kh, kw, stride)
        Ho, Wo = cols4.shape[1], cols4.shape[2]
        cols = cols4.reshape(-1, kh * kw * Cin)
    wmat = wd.reshape(kh * kw * Cin, Cout)
    out = cols @ wmat
    if b is not None:
        out += b.data
    out = out.reshape(B, Ho, Wo, Cout)
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        g2 = g.reshape(-1, Cout)
        gw = (cols.T @ g2).reshape(wd.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = g2 @ wmat.T
            if kh == 1 and kw == 1 and stride == 1 and pad == 0:
                gx = gcols.reshape(x.shape)
            else:
                gxp = kernels.col2im(gcols.reshape(B, Ho, Wo, -1), Hp, Wp, kh, kw, stride)
                gx = gxp[:, pad:pad + H, pad:pad + W, :] if pad else gxp
        if b is None:
            return gx, gw
        return gx, gw, (g2.sum(axis=0) if b.requires_grad else None)

    return make_result(out, parents, bw, "conv2d")


# ---------------------------------------------------------------- shape ops

def reshape(x, shape):
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, shape) from None
    src = x.shape
    return make_result(out, (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x, axes=None):
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError("transpose", x.shape, axes)
    inv = tuple(np.argsort(axes))
    return make_result(np.transpose(x.data, axes), (x,),
                       lambda g: (np.transpose(g, inv),), "transpose")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[t.shape for t in tensors]) from None
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(out, tuple(tensors), bw, "concat")


def slice_axis(x, start, stop, axis=-1):
    ax = axis % x.ndim
    if not 0 <= start < stop <= x.shape[ax]:
        raise ShapeError("slice_axis", x.shape, (start, stop), detail=f"axis {axis}")
    index = [builtins.slice(None)] * x.ndim
    index[ax] = builtins.slice(start, stop)
    index = tuple(index)
    src = x.shape

    def bw(g):
        full = np.zeros(src)
        full[index] = g
        return (full,)

    return make_result(x.data[index].copy(), (x,), bw, "slice_axis")


def split(x, sections, axis=-1):
    """Split into ``sections`` equal parts (int) or parts of the listed sizes."""
    n = x.shape[axis]
    if isinstance(sections, int):
        if n % sections:
            raise ShapeError("split", x.shape, (sections,), detail="not divisible")
        sizes = [n // sections] * sections
    else:
        sizes = list(sections)
        if builtins.sum(sizes) != n:
            raise ShapeError("split", x.shape, tuple(sizes))
    out, start = [], 0
    for s in sizes:
        out.append(slice_axis(x, start, start + s, axis))
        start += s
    return out


def gather_rows(table, idx):
    """``table[idx]`` for a 2-D table; backward scatter-adds into the rows."""
    idx = np.asarray(idx, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError("gather_rows", table.shape, idx.shape)
    M = table.shape[0]

    def bw(g):
        full = np.zeros(table.shape)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    if idx.size and (idx.min() < 0 or idx.max() >= M):
        raise ShapeError("gather_rows", table.shape, idx.shape, detail="index out of range")
    return make_result(table.data[idx], (table,), bw, "gather_rows")


# ---------------------------------------------------------------- reductions

def sum(x, axis=None, keepdims=False):
    src = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src),)

    return make_result(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), bw, "sum")


def mean(x, axis=None, keepdims=False):
    src = x.shape
    n = x.data.size if axis is None else int(np.prod([src[a] for a in np.atleast_1d(axis)]))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, src),)

    return make_result(np.asarray(x.data.mean(axis=axis, keepdims=keepdims)), (x,), bw, "mean")


def l1_loss(a, b):
    """Mean absolute difference."""
    if a.shape != b.shape:
        raise ShapeError("l1_loss", a.shape, b.shape)
    return mean(abs(sub(a, b)))


def mse_loss(a, b):
    """Mean squared difference."""
    if a.shape != b.shape:
        raise ShapeError("mse_loss", a.shape, b.shape)
    return mean(square(sub(a, b)))


def sum_squares(x):
    return sum(square(x))


# ---------------------------------------------------------------- normalization / attention

def softmax(x, axis=-1):
    xd = x.data
    e = np.exp(xd - xd.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_result(s, (x,), bw, "softmax")


def layer_norm(x, gain=None, bias=None, eps=1e-6):
    """Normalize over the last (channel) axis with learnable gain and bias."""
    if eps <= 0:
        raise ValueError("layer_norm: eps must be > 0")
    C = x.shape[-1]
    for p in (gain, bias):
        if p is not None and p.shape != (C,):
            raise ShapeError("layer_norm", x.shape, p.shape)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data if gain is not None else None
    out = xhat * gd if gd is not None else xhat.copy()
    if bias is not None:
        out = out + bias.data
    parents = tuple(p for p in (x, gain, bias) if p is not None)

    def bw(g):
        red = tuple(range(g.ndim - 1))
        gx_hat = g * gd if gd is not None else g
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        res = [gx]
        if gain is not None:
            res.append((g * xhat).sum(axis=red))
        if bias is not None:
            res.append(g.sum(axis=red))
        return tuple(res)

    return make_result(out, parents, bw, "layer_norm")


def default_groups(channels):
    return min(32, channels)


def group_norm(x, gain=None, bias=None, groups=None, eps=1e-6):
    """GroupNorm over NHWC input: statistics per (sample, group) across H, W and the group's channels."""
    if eps <= 0:
        raise ValueError("group_norm: eps must be > 0")
    if x.ndim != 4:
        raise ShapeError("group_norm", x.shape, detail="expected NHWC")
    B, H, W, C = x.shape
    G = default_groups(C) if groups is None else groups
    if C % G:
        raise ShapeError("group_norm", x.shape, (G,), detail="channels not divisible by groups")
    xhat, inv = kernels.group_norm_fwd(x.data, G, eps)
    gd = gain.data if gain is not None else None
    out = xhat * gd if gd is not None else xhat.copy()
    if bias is not None:
        out += bias.data
    parents = tuple(p for p in (x, gain, bias) if p is not None)

    def bw(g):
        res = [kernels.group_norm_bwd(g * gd if gd is not None else g, xhat, inv, G)
               if x.requires_grad else None]
        if gain is not None:
            res.append((g * xhat).sum(axis=(0, 1, 2)))
        if bias is not None:
            res.append(g.sum(axis=(0, 1, 2)))
        return tuple(res)

    return make_result(out, parents, bw, "group_norm")


# ---------------------------------------------------------------- resampling

def avg_pool2(x):
    """2x2 average pooling, stride 2 (NHWC, even H and W)."""
    B, H, W, C = x.shape
    if H % 2 or W % 2:
        raise ShapeError("avg_pool2", x.shape, detail="H and W must be even")
    out = x.data.reshape(B, H // 2, 2, W // 2, 2, C).mean(axis=(2, 4))

    def bw(g):
        g4 = np.repeat(np.repeat(g, 2, axis=1), 2, axis=2)
        return (g4 * 0.25,)

    return make_result(out, (x,), bw, "avg_pool2")


def upsample2(x):
    """Nearest-neighbour 2x upsampling (NHWC)."""
    B, H, W, C = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)

    def bw(g):
        return (g.reshape(B, H, 2, W, 2, C).sum(axis=(2, 4)),)

    return make_result(out, (x,), bw, "upsample2")
