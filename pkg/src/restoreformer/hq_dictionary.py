"""HQ dictionary: codebook storage, nearest-entry quantization and VQ losses."""
import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from .rng import Rng
from .tensor import ShapeError, Tensor, ops

log = logging.getLogger(__name__)


@dataclass
class Codebook:
    entries: Tensor  # (M, C), trainable

    @property
    def M(self):
        return self.entries.shape[0]

    @property
    def C(self):
        return self.entries.shape[1]


@dataclass
class QuantizationResult:
    z_p: Tensor            # same shape as the input, rows taken from the codebook
    indices: np.ndarray    # input shape without the channel axis
    distances: np.ndarray  # squared distance to the selected entry


def init_entries(M, C, seed):
    """I.i.d. Uniform[-1/M, 1/M] entries, deterministic per seed."""
    if M < 2 or C < 1:
        raise ValueError(f"codebook needs M >= 2 and C >= 1, got M={M}, C={C}")
    return Rng(seed, 0xC0DE).uniform(-1.0 / M, 1.0 / M, (M, C))


def codebook_init(M, C, seed, store=None, name="dictionary.entries"):
    data = init_entries(M, C, seed)
    t = store.add(name, data) if store is not None else Tensor(data, requires_grad=True, name=name)
    return Codebook(t)


def nearest_indices(z, book):
    """Per-row argmin of squared L2 distance; ties resolve to the lowest index.

    Distances use the expanded form ``|z|^2 - 2 z.d + |d|^2``.
    """
    book_sq = np.einsum("ij,ij->i", book, book)
    return kernels.nearest_code(z, book, book_sq)


def quantize(z, book):
    """Replace every C-vector of ``z`` (..., C) by its nearest codebook row.

    The selection is not differentiated; ``z_p`` is gathered from the codebook
    tensor so gradients applied to it reach the selected entries.
    """
    entries = book.entries
    C = entries.shape[1]
    if z.shape[-1] != C:
        raise ShapeError("quantize", z.shape, entries.shape, detail="channel mismatch")
    zd = z.data if isinstance(z, Tensor) else np.asarray(z, dtype=np.float64)
    flat = zd.reshape(-1, C)
    idx = nearest_indices(flat, entries.data)
    diff = flat - entries.data[idx]
    dist = np.einsum("ij,ij->i", diff, diff)
    z_p = ops.reshape(ops.gather_rows(entries, idx), zd.shape)
    lead = zd.shape[:-1]
    return QuantizationResult(z_p, idx.reshape(lead), dist.reshape(lead))


def dict_losses(z_h, z_p):
    """(L'_d, L'_c): mean of |sg[z_h] - z_p|^2 and of |z_h - sg[z_p]|^2."""
    if z_h.shape != z_p.shape:
        raise ShapeError("dict_losses", z_h.shape, z_p.shape)
    l_d = ops.mse_loss(ops.stop_gradient(z_h), z_p)
    l_c = ops.mse_loss(z_h, ops.stop_gradient(z_p))
    return l_d, l_c


def straight_through(z_h, z_p):
    """Decoder input: value of ``z_p``, gradient copied to ``z_h``."""
    return ops.straight_through(z_h, z_p)


def usage_histogram(indices, M):
    return np.bincount(np.asarray(indices).reshape(-1), minlength=M)


def check_usage(indices, M):
    """Warn when a batch selects fewer than two distinct entries; returns the count."""
    used = int((usage_histogram(indices, M) > 0).sum())
    if used < 2:
        log.warning("codebook collapse: only %d distinct entry used on this batch", used)
    return used
