"""Encoder/decoder and the two composed systems.

Stage 1 (HQ generation): encode -> quantize -> straight-through -> decode.
Stage 2 (restoration):   encode -> quantize -> MHCA(Z_d, MHCA(Z_d, Z_p)) -> decode.

Encoder: stem conv, 5 levels of (2 residual blocks + 2x2 average pool), 2 mid
blocks, head to C channels -- 12 blocks, 5 poolings. The decoder mirrors it with
nearest-neighbour upsampling and ends in ``(tanh + 1) / 2``.
"""
from dataclasses import dataclass, field

import numpy as np

from . import hq_dictionary as hqd
from .attention import RESIDUAL_PRIOR, AttentionBlock, init_attention
from .rng import Rng
from .tensor import ParamStore, ShapeError, Tensor, nn, ops


@dataclass
class ModelConfig:
    image_size: int = 32
    base_channels: int = 8
    channel_cap: int = 32
    z_channels: int = 32          # C, codebook entry length
    codebook_size: int = 64       # M
    n_heads: int = 4
    levels: int = 5
    blocks_per_level: int = 2
    mid_blocks: int = 2
    norm_groups: int = 8
    residual: str = RESIDUAL_PRIOR

    def channels(self, level):
        return min(self.base_channels * 2 ** level, self.channel_cap)

    @property
    def factor(self):
        return 2 ** self.levels

    @property
    def latent_size(self):
        return self.image_size // self.factor


@dataclass
class StageOutputs:
    image: Tensor                 # reconstructed / restored image
    z: Tensor                     # Z_h (stage 1) or Z_d (stage 2)
    z_p: Tensor
    indices: np.ndarray
    z_f: Tensor = None            # Z'_f, stage 2 only
    attention: list = field(default_factory=list)  # per MHCA: (B, N_h, L, L)


def _groups(cfg, ch):
    g = min(cfg.norm_groups, ch)
    while ch % g:
        g -= 1
    return g


def _init_block(scope, cin, cout, rng):
    nn.add_norm(scope, "norm1", cin)
    nn.add_conv(scope, "conv1", 3, 3, cin, cout, rng)
    nn.add_norm(scope, "norm2", cout)
    nn.add_conv(scope, "conv2", 3, 3, cout, cout, rng, gain=0.5)
    if cin != cout:
        nn.add_conv(scope, "skip", 1, 1, cin, cout, rng)


def _block(scope, cfg, x):
    cin = x.shape[-1]
    h = ops.silu(nn.group_norm(scope, "norm1", x, _groups(cfg, cin)))
    h = nn.conv(scope, "conv1", h)
    h = ops.silu(nn.group_norm(scope, "norm2", h, _groups(cfg, h.shape[-1])))
    h = nn.conv(scope, "conv2", h)
    skip = nn.conv(scope, "skip", x) if "skip.weight" in scope else x
    return ops.add(skip, h)


def init_encoder(scope, cfg, rng):
    nn.add_conv(scope, "stem", 3, 3, 3, cfg.channels(0), rng)
    k, cin = 0, cfg.channels(0)
    for level in range(cfg.levels):
        for _ in range(cfg.blocks_per_level):
            _init_block(scope.scope(f"block{k}"), cin, cfg.channels(level), rng)
            cin = cfg.channels(level)
            k += 1
    for _ in range(cfg.mid_blocks):
        _init_block(scope.scope(f"block{k}"), cin, cin, rng)
        k += 1
    nn.add_norm(scope, "head.norm", cin)
    nn.add_conv(scope, "head.conv", 3, 3, cin, cfg.z_channels, rng)


def encode(scope, cfg, x):
    """(B, H, W, 3) -> (B, H/2^levels, W/2^levels, C)."""
    if x.ndim != 4 or x.shape[-1] != 3:
        raise ShapeError("encode", x.shape, detail="expected (B, H, W, 3)")
    if x.shape[1] % cfg.factor or x.shape[2] % cfg.factor:
        raise ShapeError("encode", x.shape, detail=f"H, W must be divisible by {cfg.factor}")
    h = nn.conv(scope, "stem", x)
    k = 0
    for _ in range(cfg.levels):
        for _ in range(cfg.blocks_per_level):
            h = _block(scope.scope(f"block{k}"), cfg, h)
            k += 1
        h = ops.avg_pool2(h)
    for _ in range(cfg.mid_blocks):
        h = _block(scope.scope(f"block{k}"), cfg, h)
        k += 1
    h = ops.silu(nn.group_norm(scope, "head.norm", h, _groups(cfg, h.shape[-1])))
    return nn.conv(scope, "head.conv", h)


def init_decoder(scope, cfg, rng):
    top = cfg.channels(cfg.levels - 1)
    nn.add_conv(scope, "stem", 3, 3, cfg.z_channels, top, rng)
    k, cin = 0, top
    for _ in range(cfg.mid_blocks):
        _init_block(scope.scope(f"block{k}"), cin, cin, rng)
        k += 1
    for level in reversed(range(cfg.levels)):
        for _ in range(cfg.blocks_per_level):
            _init_block(scope.scope(f"block{k}"), cin, cfg.channels(level), rng)
            cin = cfg.channels(level)
            k += 1
    nn.add_norm(scope, "head.norm", cin)
    nn.add_conv(scope, "head.conv", 3, 3, cin, 3, rng)


def decode(scope, cfg, z):
    """(B, h, w, C) -> (B, h*2^levels, w*2^levels, 3) with values in [0, 1]."""
    if z.ndim != 4 or z.shape[-1] != cfg.z_channels:
        raise ShapeError("decode", z.shape, detail=f"expected (B, h, w, {cfg.z_channels})")
    h = nn.conv(scope, "stem", z)
    k = 0
    for _ in range(cfg.mid_blocks):
        h = _block(scope.scope(f"block{k}"), cfg, h)
        k += 1
    for _ in range(cfg.levels):
        h = ops.upsample2(h)
        for _ in range(cfg.blocks_per_level):
            h = _block(scope.scope(f"block{k}"), cfg, h)
            k += 1
    h = ops.silu(nn.group_norm(scope, "head.norm", h, _groups(cfg, h.shape[-1])))
    h = nn.conv(scope, "head.conv", h)
    return ops.scale(ops.add(ops.tanh(h), 1.0), 0.5)


def as_batch(images):
    """numpy or Tensor, (H, W, 3) or (B, H, W, 3) -> 4-D Tensor."""
    t = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=np.float64))
    if t.ndim == 3:
        t = ops.reshape(t, (1, *t.shape))
    return t


class _Network:
    def __init__(self, cfg, seed, store=None):
        self.cfg = cfg
        self.seed = seed
        self.store = store if store is not None else ParamStore()

    @property
    def book(self):
        return hqd.Codebook(self.store["dictionary.entries"])

    def encode(self, images):
        return encode(self.store.scope("encoder"), self.cfg, as_batch(images))

    def decode(self, z):
        return decode(self.store.scope("decoder"), self.cfg, z)

    def names(self, *prefixes):
        out = []
        for p in prefixes:
            out += self.store.names(p)
        return out


class HQGenerator(_Network):
    """Stage-1 network: encoder, decoder and the HQ dictionary."""

    def __init__(self, cfg, seed=0, store=None, quantize=True):
        super().__init__(cfg, seed, store)
        self.quantize = quantize
        rng = Rng(seed, 1)
        init_encoder(self.store.scope("encoder"), cfg, rng)
        init_decoder(self.store.scope("decoder"), cfg, rng)
        if quantize:
            hqd.codebook_init(cfg.codebook_size, cfg.z_channels, seed, store=self.store)

    def forward(self, images):
        z_h = self.encode(images)
        if not self.quantize:
            # plain autoencoder reference path
            return StageOutputs(self.decode(z_h), z_h, z_h, np.zeros(z_h.shape[:-1], dtype=np.int64))
        q = hqd.quantize(z_h, self.book)
        z_in = hqd.straight_through(z_h, q.z_p)
        return StageOutputs(self.decode(z_in), z_h, q.z_p, q.indices)

    __call__ = forward


class RestoreFormer(_Network):
    """Stage-2 network: encoder, frozen-or-trainable dictionary, two MHCAs, decoder."""

    def __init__(self, cfg, seed=0, store=None):
        super().__init__(cfg, seed, store)
        rng = Rng(seed, 2)
        init_encoder(self.store.scope("encoder"), cfg, rng)
        init_decoder(self.store.scope("decoder"), cfg, rng)
        hqd.codebook_init(cfg.codebook_size, cfg.z_channels, seed, store=self.store)
        init_attention(self.store.scope("mhca1"), cfg.z_channels, rng)
        init_attention(self.store.scope("mhca2"), cfg.z_channels, rng)
        self.blocks = [
            AttentionBlock(self.store.scope(n), cfg.n_heads, residual=cfg.residual)
            for n in ("mhca1", "mhca2")
        ]

    def set_test_mode(self, use_norm=True, use_ffn=True):
        for b in self.blocks:
            b.use_norm, b.use_ffn = use_norm, use_ffn

    def fuse(self, z_d, z_p):
        """Z'_f = MHCA2(Z_d, MHCA1(Z_d, Z_p))."""
        z_f = self.blocks[0].mhca(z_d, z_p)
        return self.blocks[1].mhca(z_d, z_f)

    def forward(self, images):
        z_d = self.encode(images)
        q = hqd.quantize(z_d, self.book)
        z_f = self.fuse(z_d, q.z_p)
        attn = [b.last_attention for b in self.blocks]
        return StageOutputs(self.decode(z_f), z_d, q.z_p, q.indices, z_f, attn)

    __call__ = forward

    def load_stage1(self, state):
        """Copy encoder, decoder and dictionary tensors from a stage-1 state dict."""
        loaded = []
        for prefix in ("encoder", "decoder", "dictionary"):
            loaded += self.store.load_state_dict(state, prefix=prefix)
        return loaded


def hqgen_forward(model, images):
    return model.forward(images)


def restore_forward(model, images):
    return model.forward(images)
