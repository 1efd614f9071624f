"""Synthetic degradation: blur -> bilinear down by r -> Gaussian noise -> JPEG-style
block-DCT quantisation -> bilinear up back to the input size.

Images are float arrays in [0, 1] with shape (H, W, C). The JPEG stage is a
simulation: per 8x8 block and per RGB channel (no chroma subsampling), on the
0-255 scale shifted by -128, orthonormal DCT-II, division by the standard
luminance table scaled with the libjpeg quality mapping, rounding, and the
inverse transform.
"""
import math
from dataclasses import dataclass

import numpy as np

from .resample import resize
from .rng import Rng

SIGMA_RANGE = (0.2, 10.0)
SCALE_RANGE = (1.0, 8.0)
NOISE_RANGE = (0.0, 20.0)
QUALITY_RANGE = (60.0, 100.0)

# JPEG Annex K luminance table
LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


@dataclass(frozen=True)
class DegradationSpec:
    sigma: float
    r: float
    delta: float
    q: float
    seed: int = 0

    def to_text(self):
        return f"sigma={self.sigma!r},r={self.r!r},delta={self.delta!r},q={self.q!r},seed={self.seed}"

    @classmethod
    def from_text(cls, text):
        fields = {}
        for part in text.strip().split(","):
            key, _, val = part.partition("=")
            key = key.strip()
            if key not in ("sigma", "r", "delta", "q", "seed"):
                raise ValueError(f"unknown degradation field {key!r}")
            fields[key] = int(val) if key == "seed" else float(val)
        missing = {"sigma", "r", "delta", "q"} - set(fields)
        if missing:
            raise ValueError(f"missing degradation fields: {sorted(missing)}")
        return cls(**fields)


def sample_spec(rng, seed, image_size=None, sigma=SIGMA_RANGE, r=SCALE_RANGE,
                delta=NOISE_RANGE, q=QUALITY_RANGE):
    """Uniform draw of (sigma, r, delta, q).

    With ``image_size`` given, r is capped so the downsampled image keeps at
    least one 8x8 JPEG block.
    """
    r_hi = r[1] if image_size is None else min(r[1], image_size / 8.0)
    return DegradationSpec(
        sigma=float(rng.uniform(*sigma)),
        r=float(rng.uniform(r[0], max(r[0], r_hi))),
        delta=float(rng.uniform(*delta)),
        q=float(rng.uniform(*q)),
        seed=int(seed),
    )


def gaussian_kernel(sigma):
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def symmetric_index(idx, n):
    """Half-sample symmetric extension (``d c b a | a b c d | d c b a``), any distance."""
    j = np.mod(idx, 2 * n)
    return np.where(j >= n, 2 * n - 1 - j, j)


def blur_matrix(n, sigma):
    """(n, n) operator: 1-D Gaussian correlation with symmetric boundary handling."""
    k = gaussian_kernel(sigma)
    rad = (k.size - 1) // 2
    m = np.zeros((n, n))
    rows = np.arange(n)
    for t, w in enumerate(k):
        np.add.at(m, (rows, symmetric_index(rows + t - rad, n)), w)
    return m


def gaussian_blur(img, sigma):
    """Separable Gaussian, radius ceil(3 sigma), half-sample symmetric padding.

    ``sigma < 0.1`` returns the input unchanged.
    """
    img = np.asarray(img, dtype=np.float64)
    if sigma < 0.1:
        return img.copy()
    H, W = img.shape[:2]
    by, bx = blur_matrix(H, sigma), blur_matrix(W, sigma)
    return np.einsum("ih,hw...,jw->ij...", by, img, bx, optimize=True)


def _dct_matrix(n=8):
    m = np.zeros((n, n))
    for k in range(n):
        a = math.sqrt(1.0 / n) if k == 0 else math.sqrt(2.0 / n)
        for i in range(n):
            m[k, i] = a * math.cos(math.pi * (2 * i + 1) * k / (2 * n))
    return m


DCT8 = _dct_matrix(8)


def quant_table(q):
    """libjpeg quality scaling: q >= 50 -> (100 - q)/50, q < 50 -> 50/q; entries in [1, 255]."""
    if not 1 <= q <= 100:
        raise ValueError(f"JPEG quality must lie in [1, 100], got {q}")
    scale = (100.0 - q) / 50.0 if q >= 50 else 50.0 / q
    return np.clip(np.floor(LUMA_TABLE * scale + 0.5), 1.0, 255.0)


def jpeg_sim(img, q):
    """Block-DCT quantisation on (H, W, C) in [0, 1]; an all-ones table passes through."""
    table = quant_table(q)
    img = np.asarray(img, dtype=np.float64)
    H, W, C = img.shape
    if H < 8 or W < 8:
        raise ValueError(f"image {H}x{W} smaller than one 8x8 JPEG block")
    Hp, Wp = -(-H // 8) * 8, -(-W // 8) * 8
    x = np.pad(img, ((0, Hp - H), (0, Wp - W), (0, 0)), mode="edge") * 255.0 - 128.0
    blocks = x.reshape(Hp // 8, 8, Wp // 8, 8, C).transpose(0, 2, 4, 1, 3)
    coef = DCT8 @ blocks @ DCT8.T
    if not (table == 1.0).all():
        coef = np.round(coef / table) * table
    rec = DCT8.T @ coef @ DCT8
    out = rec.transpose(0, 3, 1, 4, 2).reshape(Hp, Wp, C)
    return ((out + 128.0) / 255.0)[:H, :W]


def downsample(img, r):
    H, W = img.shape[:2]
    return resize(img, max(1, int(round(H / r))), max(1, int(round(W / r))))


def add_noise(img, delta, seed):
    """i.i.d. Gaussian noise with std delta/255 from the seeded Box-Muller stream."""
    if delta == 0:
        return img.copy()
    return img + Rng(seed, 0x4015E).normal(img.shape, std=delta / 255.0)


def degrade(img, spec, return_clamped=False):
    """Apply the full degradation; output clamped to [0, 1].

    ``return_clamped`` additionally returns the number of clamped values.
    """
    img = np.asarray(img, dtype=np.float64)
    H, W = img.shape[:2]
    x = gaussian_blur(img, spec.sigma)
    x = downsample(x, spec.r)
    if min(x.shape[:2]) < 8:
        raise ValueError(f"downsampled size {x.shape[:2]} smaller than one JPEG block (r={spec.r})")
    x = add_noise(x, spec.delta, spec.seed)
    x = jpeg_sim(x, spec.q)
    x = resize(x, H, W)
    clamped = int(((x < 0.0) | (x > 1.0)).sum())
    x = np.clip(x, 0.0, 1.0)
    return (x, clamped) if return_clamped else x


def degrade_batch(images, specs):
    return np.stack([degrade(im, sp) for im, sp in zip(images, specs)])
