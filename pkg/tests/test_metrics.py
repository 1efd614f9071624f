import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from restoreformer import metrics as M
from restoreformer.losses import IdentityNet
from restoreformer.rng import Rng


def naive_ssim(a, b, size=11, sigma=1.5):
    """Per-window loop with centred second moments."""
    ga = a @ np.array([0.299, 0.587, 0.114])
    gb = b @ np.array([0.299, 0.587, 0.114])
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-x * x / (2 * sigma * sigma))
    w = np.outer(g, g)
    w /= w.sum()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    H, W = ga.shape
    vals = []
    for i in range(H - size + 1):
        for j in range(W - size + 1):
            pa, pb = ga[i:i + size, j:j + size], gb[i:i + size, j:j + size]
            ma, mb = (w * pa).sum(), (w * pb).sum()
            va = (w * (pa - ma) ** 2).sum()
            vb = (w * (pb - mb) ** 2).sum()
            cov = (w * (pa - ma) * (pb - mb)).sum()
            vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return float(np.mean(vals))


@pytest.fixture(scope="module")
def eta():
    return IdentityNet(1234)


def gradient_fixture():
    y, x = np.mgrid[0:16, 0:16] / 15.0
    return np.stack([x, y, 0.5 * (x + y)], axis=-1) * 0.9


def rand_img(seed, shape=(24, 24, 3)):
    return Rng(seed, 12).random(shape)


# ---------------------------------------------------------------- psnr

def test_psnr_examples():
    a = rand_img(0) * 0.8
    assert M.psnr(a, a) == 99.0
    assert M.psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)
    b = rand_img(1)
    assert M.psnr(a, b) == M.psnr(b, a)
    with pytest.raises(ValueError):
        M.psnr(a, a[:10])


# ---------------------------------------------------------------- ssim

def test_ssim_identity_is_exactly_one():
    a = rand_img(2)
    assert M.ssim(a, a) == 1.0


def test_ssim_anticorrelated_below_one():
    a = rand_img(3)
    assert M.ssim(a, 1.0 - a) < 1.0


def test_ssim_matches_window_oracle():
    a = gradient_fixture()
    b = a + 0.05
    assert abs(M.ssim(a, b) - naive_ssim(a, b)) < 1e-10
    c = rand_img(4, (16, 16, 3))
    assert abs(M.ssim(a, c) - naive_ssim(a, c)) < 1e-10


def test_ssim_too_small():
    with pytest.raises(ValueError, match="window"):
        M.ssim(np.zeros((10, 30, 3)), np.zeros((10, 30, 3)))


@settings(max_examples=15, deadline=None)
@given(s1=st.integers(0, 10_000), s2=st.integers(0, 10_000))
def test_ssim_range(s1, s2):
    v = M.ssim(rand_img(s1, (12, 12, 3)), rand_img(s2, (12, 12, 3)))
    assert -1.0 <= v <= 1.0


# ---------------------------------------------------------------- idd

class _Injected:
    """Identity net stub returning a fixed embedding per image."""

    def __init__(self, table):
        self.table = table

    def embed_numpy(self, img):
        return np.asarray(self.table[float(np.asarray(img).reshape(-1)[0])])[None]


def test_idd_identity_and_symmetry(eta):
    a, b = rand_img(5, (32, 32, 3)), rand_img(6, (32, 32, 3))
    assert M.idd(a, a, eta) == 0.0
    assert abs(M.idd(a, b, eta) - M.idd(b, a, eta)) < 1e-12
    assert 0.0 <= M.idd(a, b, eta) <= math.pi


def test_idd_orthogonal_injection():
    a, b = np.zeros((4, 4, 3)), np.ones((4, 4, 3))
    stub = _Injected({0.0: [1.0, 0.0, 0.0], 1.0: [0.0, 2.5, 0.0]})
    assert M.idd(a, b, stub) == pytest.approx(math.pi / 2, abs=1e-15)


def test_idd_zero_embedding_rejected():
    with pytest.raises(ValueError, match="zero"):
        M.angle_between(np.zeros(4), np.ones(4))


def test_angle_opposite():
    assert M.angle_between([1.0, 0.0], [-3.0, 0.0]) == pytest.approx(math.pi)


# ---------------------------------------------------------------- ffd

def test_ffd_closed_form_1d():
    r = M.frechet_distance([0.0], [[1.0]], [1.0], [[1.0]])
    assert abs(r.value - 1.0) < 1e-8


@settings(max_examples=20, deadline=None)
@given(mu1=st.floats(-3, 3), mu2=st.floats(-3, 3), v1=st.floats(0.1, 4), v2=st.floats(0.1, 4))
def test_ffd_1d_general_closed_form(mu1, mu2, v1, v2):
    r = M.frechet_distance([mu1], [[v1]], [mu2], [[v2]])
    expect = (mu1 - mu2) ** 2 + (math.sqrt(v1) - math.sqrt(v2)) ** 2
    assert abs(r.value - expect) < 1e-8


def test_ffd_identical_sets_and_symmetry():
    a = Rng(0).normal((40, 16))
    b = Rng(1).normal((40, 16)) * 1.3 + 0.2
    assert abs(M.ffd(a, a).value) < 1e-8
    assert abs(M.ffd(a, b).value - M.ffd(b, a).value) < 1e-8
    assert M.ffd(a, b).value > 0


def test_ffd_singular_covariance_regularised():
    a = Rng(0).normal((3, 16))   # 3 samples in 16-D: rank-deficient covariance
    b = Rng(1).normal((3, 16))
    r = M.ffd(a, b)
    assert r.regularized
    assert r.value >= -1e-8


def test_ffd_needs_two_samples():
    with pytest.raises(ValueError):
        M.ffd(np.zeros((1, 4)), np.zeros((5, 4)))


def test_evaluate_report(eta):
    imgs = [rand_img(i, (32, 32, 3)) for i in range(3)]
    outs = [np.clip(x + 0.02, 0, 1) for x in imgs]
    rep = M.evaluate(["a", "b", "c"], outs, imgs, eta)
    assert rep.names == ["a", "b", "c"]
    assert len(rep.psnr) == len(rep.ssim) == len(rep.idd) == 3
    assert rep.ffd is not None and rep.ffd >= -1e-8
    csv = rep.to_csv().splitlines()
    assert csv[0] == "name,psnr,ssim,idd" and csv[1].startswith("a,")
    assert rep.summary().startswith("n=3")
    same = M.evaluate(["a", "b"], imgs[:2], imgs[:2], eta)
    assert same.psnr == [99.0, 99.0] and same.ssim == [1.0, 1.0] and same.idd == [0.0, 0.0]
