"""Training objectives, the fixed stand-in feature networks and the discriminators.

The perceptual network and the identity network are small convolutional
pyramids with parameters drawn from a pinned seed and never trained; they stand
in for pretrained VGG-19 and ArcFace, so the losses built on them check the
mechanism, not perceptual quality.
"""
from dataclasses import dataclass

import numpy as np

from .resample import bilinear_matrix
from .rng import Rng
from .tensor import ParamStore, ShapeError, Tensor, no_grad, nn, ops

# generator-side terms, in total-loss order
RESTORE_TERMS = ("l1", "per", "p", "disc", "style", "adv", "id")
DICT_TERMS = ("l1", "per", "adv", "d", "c")

DEFAULT_RESTORE_WEIGHTS = {"per": 1.0, "p": 0.25, "disc": 1.0, "style": 2000.0, "adv": 0.8, "id": 1.5}
DEFAULT_DICT_WEIGHTS = {"per": 1.0, "adv": 0.8, "d": 1.0, "c": 0.25}

REGIONS = ("left_eye", "right_eye", "mouth")


@dataclass(frozen=True)
class RoiBoxes:
    """Normalised (x0, y0, x1, y1) boxes for the three facial regions."""

    left_eye: tuple = (0.16, 0.26, 0.46, 0.50)
    right_eye: tuple = (0.54, 0.26, 0.84, 0.50)
    mouth: tuple = (0.28, 0.60, 0.72, 0.84)

    def __post_init__(self):
        for r in REGIONS:
            x0, y0, x1, y1 = getattr(self, r)
            if not (0.0 <= x0 <= 1.0 and 0.0 <= x1 <= 1.0 and 0.0 <= y0 <= 1.0 and 0.0 <= y1 <= 1.0):
                raise ValueError(f"{r} box {getattr(self, r)} outside [0, 1]^2")

    def items(self):
        return [(r, getattr(self, r)) for r in REGIONS]


def roi_crop(images, box, out_size):
    """Differentiable crop of a normalised box, bilinearly resized to ``out_size``^2.

    Fixed-box substitute for ROI align: one bilinear sample per output bin,
    sampled at bin centres.
    """
    x0, y0, x1, y1 = box
    if x1 <= x0 or y1 <= y0:
        raise ValueError(f"degenerate ROI box {box}")
    B, H, W, C = images.shape
    ry = Tensor(bilinear_matrix(H, out_size, y0 * H, y1 * H))
    rxt = Tensor(bilinear_matrix(W, out_size, x0 * W, x1 * W).T)
    t = ops.transpose(images, (0, 3, 1, 2))          # B, C, H, W
    t = ops.matmul(ops.matmul(ry, t), rxt)           # B, C, S, S
    return ops.transpose(t, (0, 2, 3, 1))


# ---------------------------------------------------------------- networks

class FeaturePyramid:
    """Fixed, untrained conv pyramid; ``features`` returns one map per stage."""

    def __init__(self, seed, widths=(8, 16, 16, 32, 32), name="perceptual"):
        self.store = ParamStore()
        self.widths = widths
        rng = Rng(seed, 0xFEA7)
        cin = 3
        for i, w in enumerate(widths):
            nn.add_conv(self.store.scope(f"{name}.stage{i}"), "conv", 3, 3, cin, w, rng, gain=np.sqrt(6.0))
            cin = w
        self.name = name
        self.store.set_requires_grad(False)

    def features(self, images):
        h = ops.scale(ops.add(images, -0.5), 2.0)
        out = []
        for i in range(len(self.widths)):
            if i:
                h = ops.avg_pool2(h)
            h = ops.relu(nn.conv(self.store.scope(f"{self.name}.stage{i}"), "conv", h))
            out.append(h)
        return out


class IdentityNet:
    """Fixed stand-in identity embedder: strided convs, 4x4 pooling grid, linear map to ``dim``."""

    def __init__(self, seed, dim=16, widths=(8, 16, 16)):
        self.store = ParamStore()
        self.dim = dim
        self.widths = widths
        rng = Rng(seed, 0x1D)
        s = self.store.scope("identity")
        cin = 3
        for i, w in enumerate(widths):
            nn.add_conv(s, f"conv{i}", 3, 3, cin, w, rng, bias=False, gain=np.sqrt(6.0))
            cin = w
        bound = 1.0 / np.sqrt(16 * cin)
        s.add("proj", rng.uniform(-bound, bound, (16 * cin, dim)))
        self.store.set_requires_grad(False)

    def embed(self, images):
        """(B, H, W, 3) -> unnormalised (B, dim) embeddings."""
        s = self.store.scope("identity")
        h = ops.scale(ops.add(images, -0.5), 2.0)
        for i in range(len(self.widths)):
            h = ops.relu(nn.conv(s, f"conv{i}", h, stride=2, pad=1))
        while h.shape[1] > 4:
            h = ops.avg_pool2(h)
        B = h.shape[0]
        return ops.matmul(ops.reshape(h, (B, -1)), s["proj"])

    def unit_embed(self, images):
        e = self.embed(images)
        norm = ops.sqrt(ops.add(ops.sum(ops.square(e), axis=1, keepdims=True), 1e-12))
        return ops.div(e, norm)

    def embed_numpy(self, images):
        with no_grad():
            x = Tensor(np.asarray(images, dtype=np.float64))
            if x.ndim == 3:
                x = ops.reshape(x, (1, *x.shape))
            return self.embed(x).data


class Discriminator:
    """Strided-conv classifier producing a logit map; ``features`` are the per-stage activations."""

    def __init__(self, store, prefix, seed, widths=(8, 16, 32)):
        self.store = store
        self.prefix = prefix
        self.widths = widths
        rng = Rng(seed, 0xD15C, sum(map(ord, prefix)))
        s = store.scope(prefix)
        cin = 3
        for i, w in enumerate(widths):
            nn.add_conv(s, f"conv{i}", 3, 3, cin, w, rng)
            cin = w
        nn.add_conv(s, "out", 3, 3, cin, 1, rng)

    def names(self):
        return self.store.names(self.prefix)

    def __call__(self, images, return_features=False):
        s = self.store.scope(self.prefix)
        h = ops.scale(ops.add(images, -0.5), 2.0)
        feats = []
        for i in range(len(self.widths)):
            h = ops.silu(nn.conv(s, f"conv{i}", h, stride=2, pad=1))
            feats.append(h)
        logits = nn.conv(s, "out", h)
        return (logits, feats) if return_features else logits


# ---------------------------------------------------------------- adversarial helpers

def _guard(logits, who):
    p = ops._sigmoid(logits.data)
    if not ((p > 0.0) & (p < 1.0)).all():
        raise FloatingPointError(f"{who}: discriminator probability saturated outside (0, 1)")


def adversarial_objective(real_logits, fake_logits):
    """mean log D(real) + mean log(1 - D(fake)); the discriminator maximises it."""
    _guard(real_logits, "D(real)")
    _guard(fake_logits, "D(fake)")
    return ops.add(ops.mean(ops.log_sigmoid(real_logits)),
                   ops.mean(ops.log_sigmoid(ops.scale(fake_logits, -1.0))))


def discriminator_loss(real_logits, fake_logits):
    """Quantity minimised by the discriminator: the negated objective."""
    return ops.scale(adversarial_objective(real_logits, fake_logits), -1.0)


def generator_adversarial(fake_logits):
    """Non-saturating generator term -mean log D(fake)."""
    _guard(fake_logits, "D(fake)")
    return ops.scale(ops.mean(ops.log_sigmoid(fake_logits)), -1.0)


# ---------------------------------------------------------------- losses

def _check(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(op, a.shape, b.shape)


def perceptual_loss(target, output, phi):
    """Mean over pyramid stages of the mean squared feature difference."""
    _check("perceptual_loss", target, output)
    with no_grad():
        ft = phi.features(ops.stop_gradient(target))
    fo = phi.features(output)
    terms = [ops.mse_loss(ops.stop_gradient(a), b) for a, b in zip(ft, fo)]
    total = terms[0]
    for t in terms[1:]:
        total = ops.add(total, t)
    return ops.scale(total, 1.0 / len(terms))


def pixel_losses(target, output, z_d, z_p, phi, prior_grad=False):
    """(L_l1, L_per, L_p). The prior is stop-gradiented inside L_p unless ``prior_grad``."""
    _check("pixel_losses", target, output)
    _check("pixel_losses", z_d, z_p)
    l1 = ops.l1_loss(ops.stop_gradient(target), output)
    per = perceptual_loss(target, output, phi)
    lp = ops.mse_loss(z_p if prior_grad else ops.stop_gradient(z_p), z_d)
    return l1, per, lp


def gram(f):
    """Channel correlation F^T F / (h w c) for (h, w, c) or (B, h, w, c) maps."""
    squeeze = f.ndim == 3
    if squeeze:
        f = ops.reshape(f, (1, *f.shape))
    B, h, w, c = f.shape
    if h * w < 1:
        raise ShapeError("gram", f.shape)
    flat = ops.reshape(f, (B, h * w, c))
    g = ops.scale(ops.matmul(ops.transpose(flat, (0, 2, 1)), flat), 1.0 / (h * w * c))
    return ops.reshape(g, (c, c)) if squeeze else g


def _style_distance(fa, fb):
    """Sum over stages of the batch-mean squared Frobenius distance of Grams."""
    total = None
    for a, b in zip(fa, fb):
        d = ops.sub(gram(a), gram(b))
        t = ops.scale(ops.sum(ops.square(d)), 1.0 / a.shape[0])
        total = t if total is None else ops.add(total, t)
    return total


def component_losses(target, output, boxes, region_discs, crop_size=16, weights=None):
    """(L_disc, L_style) summed over regions; generator side.

    ``region_discs`` maps region name -> :class:`Discriminator`; ``weights``
    optionally scales each region's contribution.
    """
    _check("component_losses", target, output)
    weights = weights or {}
    l_disc = l_style = None
    for region, box in boxes.items():
        w = weights.get(region, 1.0)
        d = region_discs[region]
        real = roi_crop(ops.stop_gradient(target), box, crop_size)
        fake = roi_crop(output, box, crop_size)
        fake_logits, fake_feats = d(fake, return_features=True)
        with no_grad():
            _, real_feats = d(real, return_features=True)
        real_feats = [ops.stop_gradient(f) for f in real_feats]
        disc = ops.scale(generator_adversarial(fake_logits), w)
        style = ops.scale(_style_distance(real_feats, fake_feats), w)
        l_disc = disc if l_disc is None else ops.add(l_disc, disc)
        l_style = style if l_style is None else ops.add(l_style, style)
    return l_disc, l_style


def region_discriminator_loss(target, output, boxes, region_discs, crop_size=16):
    """Discriminator-side regional loss on detached crops."""
    total = None
    for region, box in boxes.items():
        d = region_discs[region]
        real = roi_crop(ops.stop_gradient(target), box, crop_size)
        fake = roi_crop(ops.stop_gradient(output), box, crop_size)
        t = discriminator_loss(d(real), d(fake))
        total = t if total is None else ops.add(total, t)
    return total


def identity_loss(target, output, eta):
    """Batch-mean squared distance of unit identity embeddings."""
    _check("identity_loss", target, output)
    with no_grad():
        et = eta.unit_embed(ops.stop_gradient(target))
    eo = eta.unit_embed(output)
    return ops.scale(ops.sum(ops.square(ops.sub(ops.stop_gradient(et), eo))), 1.0 / output.shape[0])


def image_losses(target, output, disc, eta):
    """(L_adv, L_id): non-saturating generator adversarial term and identity loss."""
    _check("image_losses", target, output)
    return generator_adversarial(disc(output)), identity_loss(target, output, eta)


def _weighted_total(parts, weights, terms, who):
    for k in terms:
        if k not in parts:
            raise KeyError(f"{who}: missing term {k!r}")
        v = float(np.asarray(parts[k].data if isinstance(parts[k], Tensor) else parts[k]))
        if not np.isfinite(v):
            raise FloatingPointError(f"{who}: term {k!r} is not finite ({v})")
    as_t = lambda v: v if isinstance(v, Tensor) else Tensor(np.asarray(v, dtype=np.float64))
    total = as_t(parts["l1"])
    for k in terms[1:]:
        w = float(weights.get(k, 0.0))
        if w:
            total = ops.add(total, ops.scale(as_t(parts[k]), w))
    return total


def total_restore_loss(parts, weights=None):
    """L_RF = L_l1 + sum of weighted per, p, disc, style, adv, id terms."""
    return _weighted_total(parts, DEFAULT_RESTORE_WEIGHTS if weights is None else weights,
                           RESTORE_TERMS, "total_restore_loss")


def total_dict_loss(parts, weights=None):
    """L_Dict = L'_l1 + weighted per, adv, d, c terms."""
    return _weighted_total(parts, DEFAULT_DICT_WEIGHTS if weights is None else weights,
                           DICT_TERMS, "total_dict_loss")
