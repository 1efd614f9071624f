import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from restoreformer import hq_dictionary as hqd
from restoreformer.rng import Rng
from restoreformer.tensor import ShapeError, Tape, Tensor, ops


def brute_force_nearest(z, book):
    """Exhaustive double loop over sequentially summed squared differences.

    Strict '<' keeps the lowest index on ties.
    """
    out = np.empty(len(z), dtype=np.int64)
    for i, row in enumerate(z):
        best, best_d = 0, None
        for m, d in enumerate(book):
            dist = 0.0
            for a, b in zip(row, d):
                t = a - b
                dist += t * t
            if best_d is None or dist < best_d:
                best, best_d = m, dist
        out[i] = best
    return out


def book_of(entries):
    return hqd.Codebook(Tensor(np.asarray(entries, dtype=np.float64), requires_grad=True))


def test_oracle_1000_vectors():
    M, C = 64, 32
    book = book_of(hqd.init_entries(M, C, 0) * 64)  # spread entries to unit scale
    z = Rng(0, 5).normal((1000, C)) * 0.6
    res = hqd.quantize(Tensor(z), book)
    np.testing.assert_array_equal(res.indices, brute_force_nearest(z, book.entries.data))


def test_oracle_with_constructed_ties():
    M, C = 64, 32
    entries = Rng(1, 2).normal((M, C))
    entries[40] = entries[7]           # exact duplicate rows: 7 must win
    entries[63] = entries[0]
    book = book_of(entries)
    # midpoint between two rows symmetric about the origin: equidistant
    a = np.zeros(C)
    a[3] = 1.0
    entries2 = entries.copy()
    entries2[10], entries2[20] = a, -a
    z = np.stack([entries[7], entries[40], entries[0], entries[63], np.zeros(C)])
    res = hqd.quantize(Tensor(z), book)
    assert res.indices[:4].tolist() == [7, 7, 0, 0]
    np.testing.assert_array_equal(res.indices, brute_force_nearest(z, entries))
    # equidistant pair with nothing closer: lowest index wins
    far = np.full((M, C), 50.0)
    far[10], far[20] = a, -a
    res2 = hqd.quantize(Tensor(np.zeros((1, C))), book_of(far))
    assert res2.indices.tolist() == [10]
    assert brute_force_nearest(np.zeros((1, C)), far).tolist() == [10]


def test_hand_computed_two_entry_example():
    book = book_of([[0.0, 0.0], [1.0, 1.0]])
    z = np.array([[0.4, 0.4], [0.6, 0.6], [0.5, 0.5]])
    res = hqd.quantize(Tensor(z), book)
    assert res.indices.tolist() == [0, 1, 0]
    np.testing.assert_allclose(res.distances, [0.32, 0.32, 0.5], atol=1e-15)


def test_expanded_distances_match_naive():
    book = book_of(Rng(3).normal((64, 32)))
    z = Rng(4).normal((200, 32))
    res = hqd.quantize(Tensor(z), book)
    naive = ((z - book.entries.data[res.indices]) ** 2).sum(1)
    np.testing.assert_allclose(res.distances, naive, rtol=0, atol=1e-10)


def test_exact_match_fixed_point_and_idempotence():
    entries = Rng(5).normal((16, 8))
    book = book_of(entries)
    pick = np.array([3, 3, 0, 15, 9, 2])
    z = entries[pick].reshape(2, 3, 8)
    res = hqd.quantize(Tensor(z), book)
    np.testing.assert_array_equal(res.indices.reshape(-1), pick)
    assert (res.distances == 0).all()
    again = hqd.quantize(res.z_p, book)
    np.testing.assert_array_equal(again.z_p.data, res.z_p.data)
    assert (again.distances == 0).all()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), m=st.integers(2, 20))
def test_zp_rows_are_codebook_rows_and_tie_totality(seed, m):
    entries = np.round(Rng(seed).normal((m, 4)), 1)   # coarse grid makes ties common
    z = np.round(Rng(seed, 1).normal((25, 4)), 1)
    res = hqd.quantize(Tensor(z), book_of(entries))
    np.testing.assert_array_equal(res.z_p.data, entries[res.indices])
    np.testing.assert_array_equal(res.indices, brute_force_nearest(z, entries))


def test_channel_mismatch():
    with pytest.raises(ShapeError, match="channel"):
        hqd.quantize(Tensor(np.zeros((2, 5))), book_of(np.zeros((4, 4))))


# ---------------------------------------------------------------- init

def test_init_shape_range_and_determinism():
    a = hqd.codebook_init(1024, 256, 7).entries.data
    assert a.shape == (1024, 256)
    assert (np.abs(a) <= 1.0 / 1024).all()
    b1, b2 = hqd.init_entries(64, 32, 0), hqd.init_entries(64, 32, 0)
    np.testing.assert_array_equal(b1, b2)
    assert (np.abs(b1) <= 1.0 / 64).all()
    assert not np.array_equal(b1, hqd.init_entries(64, 32, 1))


def test_init_rejects_small_m():
    with pytest.raises(ValueError):
        hqd.codebook_init(1, 8, 0)


# ---------------------------------------------------------------- losses

def test_dict_losses_examples():
    zp = Tensor(Rng(0).normal((2, 2, 4)))
    zero_d, zero_c = hqd.dict_losses(zp, zp)
    assert float(zero_d.data) == 0.0 and float(zero_c.data) == 0.0
    eps = 0.05
    zh = Tensor(zp.data + eps)
    ld, lc = hqd.dict_losses(zh, zp)
    assert float(ld.data) == pytest.approx(eps ** 2, rel=1e-12)
    assert float(lc.data) == pytest.approx(eps ** 2, rel=1e-12)
    with pytest.raises(ShapeError):
        hqd.dict_losses(zp, Tensor(np.zeros((2, 2, 3))))


def test_gradient_separation():
    book = book_of(Rng(1).normal((8, 4)))
    zh = Tensor(Rng(2).normal((3, 4)), requires_grad=True)
    with Tape() as t:
        ld, _ = hqd.dict_losses(zh, hqd.quantize(zh, book).z_p)
        t.backward(ld)
    assert zh.grad is None
    assert np.abs(book.entries.grad).sum() > 0
    book.entries.grad = None
    with Tape() as t:
        _, lc = hqd.dict_losses(zh, hqd.quantize(zh, book).z_p)
        t.backward(lc)
    assert book.entries.grad is None
    assert np.abs(zh.grad).sum() > 0


def test_vq_step_moves_selected_codewords_closer():
    book = book_of(Rng(1).normal((8, 4)))
    zh = Tensor(Rng(2).normal((6, 4)))
    with Tape() as t:
        res = hqd.quantize(zh, book)
        ld, _ = hqd.dict_losses(zh, res.z_p)
        t.backward(ld)
    before = float(ld.data)
    sel = np.unique(res.indices)
    old = book.entries.data.copy()
    book.entries.data = old - 0.1 * book.entries.grad
    after = float(hqd.dict_losses(zh, Tensor(book.entries.data[res.indices]))[0].data)
    assert after < before
    unused = np.setdiff1d(np.arange(8), sel)
    np.testing.assert_array_equal(book.entries.data[unused], old[unused])


# ---------------------------------------------------------------- straight-through

def test_straight_through_forward_and_sum_gradient():
    book = book_of(Rng(1).normal((8, 4)))
    zh = Tensor(Rng(2).normal((5, 4)), requires_grad=True)
    with Tape() as t:
        res = hqd.quantize(zh, book)
        st_ = hqd.straight_through(zh, res.z_p)
        np.testing.assert_array_equal(st_.data, res.z_p.data)
        t.backward(ops.sum(st_))
    np.testing.assert_array_equal(zh.grad, np.ones((5, 4)))
    assert book.entries.grad is None


def test_straight_through_matches_leaf_gradient():
    book = book_of(Rng(1).normal((8, 4)))
    zh = Tensor(Rng(2).normal((5, 4)), requires_grad=True)
    target = Rng(3).normal((5, 4))
    with Tape() as t:
        zst = hqd.straight_through(zh, hqd.quantize(zh, book).z_p)
        t.backward(ops.sum(ops.square(ops.sub(zst, Tensor(target)))))
    leaf = Tensor(hqd.quantize(zh, book).z_p.data, requires_grad=True)
    with Tape() as t:
        t.backward(ops.sum(ops.square(ops.sub(leaf, Tensor(target)))))
    np.testing.assert_allclose(zh.grad, leaf.grad, rtol=0, atol=1e-12)


def test_straight_through_shape_mismatch():
    with pytest.raises(ShapeError):
        hqd.straight_through(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


# ---------------------------------------------------------------- usage

def test_usage_histogram_and_warning(caplog):
    h = hqd.usage_histogram(np.array([[1, 1], [3, 1]]), 5)
    assert h.tolist() == [0, 3, 0, 1, 0]
    with caplog.at_level(logging.WARNING):
        assert hqd.check_usage(np.array([2, 2, 2]), 4) == 1
    assert "collapse" in caplog.text
    assert hqd.check_usage(np.array([0, 1]), 4) == 2
