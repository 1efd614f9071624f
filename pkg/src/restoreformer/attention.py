"""Multi-head self-attention (MHSA) and cross-attention (MHCA) blocks.

MHSA draws queries, keys and values from one feature map. MHCA takes queries
from the degraded features and keys/values from the dictionary priors, and
adds the *prior* (not the query) back before LN and the FFN. No positional
encoding is used, so both blocks are equivariant to spatial permutations.
"""
from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, nn, ops

RESIDUAL_PRIOR = "prior"     # MHCA-P, default
RESIDUAL_DEGRADED = "degraded"  # MHCA-D ablation


def attend(q, k, v, n_heads, return_weights=False):
    """Scaled dot-product attention per head, heads concatenated on channels.

    ``q``: (..., L_q, C); ``k``, ``v``: (..., L_kv, C). Returns (..., L_q, C)
    and, if requested, the weights as an array (..., N_h, L_q, L_kv).
    """
    C = q.shape[-1]
    if C % n_heads:
        raise ShapeError("attend", q.shape, detail=f"C={C} not divisible by N_h={n_heads}")
    if k.shape[-2] == 0 or v.shape[-2] == 0:
        raise ShapeError("attend", k.shape, v.shape, detail="empty keys/values")
    if k.shape != v.shape or k.shape[-1] != C:
        raise ShapeError("attend", q.shape, k.shape, v.shape)
    ch = C // n_heads
    lead = q.shape[:-2]
    Lq, Lk = q.shape[-2], k.shape[-2]
    nd = len(lead)

    def heads(x, L):
        x = ops.reshape(x, (*lead, L, n_heads, ch))
        return ops.transpose(x, (*range(nd), nd + 1, nd, nd + 2))

    qh, kh, vh = heads(q, Lq), heads(k, Lk), heads(v, Lk)
    kt = ops.transpose(kh, (*range(nd + 1), nd + 2, nd + 1))
    scores = ops.scale(ops.matmul(qh, kt), 1.0 / np.sqrt(ch))
    weights = ops.softmax(scores, axis=-1)
    z = ops.matmul(weights, vh)
    z = ops.transpose(z, (*range(nd), nd + 1, nd, nd + 2))
    z = ops.reshape(z, (*lead, Lq, C))
    if return_weights:
        return z, weights.data
    return z


def init_attention(scope, channels, rng):
    """Create projection, LN and FFN parameters under ``scope``."""
    bound = 1.0 / np.sqrt(channels)
    for p in ("q", "k", "v", "o"):
        scope.add(f"w_{p}", rng.uniform(-bound, bound, (channels, channels)))
        scope.add(f"b_{p}", np.zeros(channels))
    nn.add_norm(scope, "ln", channels)
    nn.add_conv(scope, "ffn.conv1", 3, 3, channels, channels, rng)
    nn.add_conv(scope, "ffn.conv2", 3, 3, channels, channels, rng)


@dataclass
class AttentionBlock:
    """One transformer block bound to its parameters.

    ``use_norm``/``use_ffn`` switch LN and the FFN off (test mode); the output
    projection after head concatenation is an addition beyond the bare
    multi-head formula and can be disabled with ``use_out_proj``.
    """

    scope: object
    n_heads: int = 4
    residual: str = RESIDUAL_PRIOR
    use_norm: bool = True
    use_ffn: bool = True
    use_out_proj: bool = True
    last_attention: np.ndarray = field(default=None, repr=False)

    def _proj(self, x, p):
        return ops.add(ops.matmul(x, self.scope[f"w_{p}"]), self.scope[f"b_{p}"])

    def _ffn(self, x):
        h = nn.conv(self.scope, "ffn.conv1", x)
        return nn.conv(self.scope, "ffn.conv2", ops.silu(h))

    def _run(self, z_q, z_kv, z_res):
        z_q, squeeze = _as_map(z_q)
        z_kv, _ = _as_map(z_kv)
        z_res, _ = _as_map(z_res)
        if z_q.shape != z_kv.shape:
            raise ShapeError("attention block", z_q.shape, z_kv.shape)
        B, H, W, C = z_q.shape
        flat = lambda t: ops.reshape(t, (B, H * W, C))
        q = self._proj(flat(z_q), "q")
        k = self._proj(flat(z_kv), "k")
        v = self._proj(flat(z_kv), "v")
        z_mh, self.last_attention = attend(q, k, v, self.n_heads, return_weights=True)
        if self.use_out_proj:
            z_mh = self._proj(z_mh, "o")
        h = ops.add(ops.reshape(z_mh, (B, H, W, C)), z_res)
        if self.use_norm:
            h = ops.layer_norm(h, self.scope["ln.gain"], self.scope["ln.bias"])
        if self.use_ffn:
            h = self._ffn(h)
        return _restore(h, squeeze)

    def mhsa(self, z_d):
        """FFN(LN(MHA(Z_d, Z_d, Z_d) + Z_d))."""
        return self._run(z_d, z_d, z_d)

    def mhca(self, z_d, z_p):
        """FFN(LN(MHA(Z_d, Z_p, Z_p) + Z_p)); the MHCA-D variant adds Z_d instead."""
        if z_d.shape != z_p.shape:
            raise ShapeError("mhca", z_d.shape, z_p.shape)
        res = z_p if self.residual == RESIDUAL_PRIOR else z_d
        return self._run(z_d, z_p, res)


def _as_map(z):
    """Accept (L, C), (H', W', C) or (B, H', W', C); (L, C) is laid out as an L x 1 map."""
    if z.ndim == 2:
        return ops.reshape(z, (1, z.shape[0], 1, z.shape[1])), z.shape
    if z.ndim == 3:
        return ops.reshape(z, (1, *z.shape)), z.shape
    if z.ndim == 4:
        return z, None
    raise ShapeError("attention block", z.shape, detail="expected 2-D, 3-D or 4-D input")


def _restore(h, squeeze):
    return h if squeeze is None else ops.reshape(h, squeeze)


def mhsa_block(z_d, scope, n_heads, **flags):
    return AttentionBlock(scope, n_heads, **flags).mhsa(z_d)


def mhca_block(z_d, z_p, scope, n_heads, **flags):
    return AttentionBlock(scope, n_heads, **flags).mhca(z_d, z_p)
