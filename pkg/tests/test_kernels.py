import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from restoreformer import kernels
from restoreformer.kernels import _fallback
from restoreformer.rng import Rng

native = pytest.mark.skipif("native" not in kernels.available_backends(), reason="extension not built")


def rand(shape, seed):
    return Rng(seed, 41).normal(shape)


def naive_im2col(xp, kh, kw, stride):
    B, Hp, Wp, C = xp.shape
    Ho, Wo = (Hp - kh) // stride + 1, (Wp - kw) // stride + 1
    out = np.zeros((B, Ho, Wo, kh * kw * C))
    for b in range(B):
        for i in range(Ho):
            for j in range(Wo):
                out[b, i, j] = xp[b, i * stride:i * stride + kh, j * stride:j * stride + kw].reshape(-1)
    return out


@pytest.mark.parametrize("stride", [1, 2])
def test_fallback_im2col_matches_loop(stride):
    xp = rand((2, 7, 6, 3), 0)
    np.testing.assert_array_equal(_fallback.im2col(xp, 3, 3, stride), naive_im2col(xp, 3, 3, stride))


@pytest.mark.parametrize("stride", [1, 2])
def test_col2im_is_adjoint(stride):
    xp = rand((1, 9, 8, 2), 1)
    cols = _fallback.im2col(xp, 3, 3, stride)
    y = rand(cols.shape, 2)
    lhs = float((cols * y).sum())
    rhs = float((xp * _fallback.col2im(y, 9, 8, 3, 3, stride)).sum())
    assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))


def test_group_norm_fallback_statistics():
    x = rand((2, 3, 3, 8), 3) * 4 + 1
    xhat, inv = _fallback.group_norm_fwd(x, 4, 1e-6)
    g = xhat.reshape(2, 9, 4, 2)
    np.testing.assert_allclose(g.mean(axis=(1, 3)), 0.0, atol=1e-12)
    np.testing.assert_allclose((g ** 2).mean(axis=(1, 3)), 1.0, atol=1e-6)
    assert inv.shape == (2, 4)


@native
@pytest.mark.parametrize("stride", [1, 2])
def test_backends_agree_im2col_col2im(stride):
    from restoreformer.kernels import _native
    xp = rand((2, 10, 9, 4), 4)
    a = _fallback.im2col(xp, 3, 3, stride)
    np.testing.assert_array_equal(np.asarray(_native.im2col(xp, 3, 3, stride)), a)
    np.testing.assert_array_equal(np.asarray(_native.col2im(a, 10, 9, 3, 3, stride)),
                                  _fallback.col2im(a, 10, 9, 3, 3, stride))


@native
def test_backends_agree_group_norm():
    from restoreformer.kernels import _native
    x = rand((2, 4, 4, 8), 5)
    xa, ia = _fallback.group_norm_fwd(x, 4, 1e-6)
    xb, ib = (np.asarray(v) for v in _native.group_norm_fwd(x, 4, 1e-6))
    np.testing.assert_allclose(xb, xa, rtol=0, atol=1e-12)
    np.testing.assert_allclose(ib, ia, rtol=1e-12)
    g = rand(x.shape, 6)
    np.testing.assert_allclose(np.asarray(_native.group_norm_bwd(g, xa, ia, 4)),
                               _fallback.group_norm_bwd(g, xa, ia, 4), rtol=0, atol=1e-12)


@native
@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), m=st.integers(2, 40))
def test_backends_agree_nearest_code(seed, m):
    from restoreformer.kernels import _native
    book = np.round(rand((m, 6), seed), 1)
    z = np.round(rand((50, 6), seed + 1), 1)
    sq = (book ** 2).sum(1)
    np.testing.assert_array_equal(np.asarray(_native.nearest_code(z, book, sq)),
                                  _fallback.nearest_code(z, book, sq))


def test_use_backend_switches_and_restores():
    prev = kernels.use_backend("python")
    try:
        assert kernels.BACKEND == "python"
        with pytest.raises(ValueError):
            kernels.use_backend("gpu")
    finally:
        kernels.use_backend(prev)
    assert kernels.BACKEND == prev
