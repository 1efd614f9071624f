"""PSNR, SSIM, identity angle (IDD) and a Frechet feature distance (FFD).

FFD is the FID formula evaluated on the fixed stand-in identity embeddings
rather than Inception features, so its values are not comparable to FID.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

PSNR_CAP = 99.0
REC601 = np.array([0.299, 0.587, 0.114])


def _check(a, b, who):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"{who}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b):
    """10 log10(1 / MSE) for images in [0, 1]; identical images give the 99 dB cap."""
    a, b = _check(a, b, "psnr")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def to_gray(img):
    img = np.asarray(img, dtype=np.float64)
    return img @ REC601 if img.ndim == 3 and img.shape[-1] == 3 else img


def ssim_window(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    g /= g.sum()
    return g


def _valid_filter(img, g):
    """Separable 'valid' correlation with the 1-D window ``g``."""
    n = g.size
    H, W = img.shape
    rows = sum(g[k] * img[k:H - n + 1 + k, :] for k in range(n))
    return sum(g[k] * rows[:, k:W - n + 1 + k] for k in range(n))


def ssim(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03):
    """Mean SSIM over valid windows of the Rec.601 luma, unit dynamic range."""
    a, b = _check(a, b, "ssim")
    x, y = to_gray(a), to_gray(b)
    if min(x.shape) < window:
        raise ValueError(f"ssim: image {x.shape} smaller than the {window}x{window} window")
    g = ssim_window(window, sigma)
    c1, c2 = k1 ** 2, k2 ** 2
    mx, my = _valid_filter(x, g), _valid_filter(y, g)
    sxx = _valid_filter(x * x, g) - mx * mx
    syy = _valid_filter(y * y, g) - my * my
    sxy = _valid_filter(x * y, g) - mx * my
    s = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    return float(s.mean())


def angle_between(u, v):
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("idd: zero embedding")
    if np.array_equal(u / nu, v / nv):
        return 0.0
    cos = float(np.clip(np.dot(u / nu, v / nv), -1.0, 1.0))
    return float(np.arccos(cos))


def idd(a, b, eta):
    """Angle (radians) between identity embeddings of two images."""
    a, b = _check(a, b, "idd")
    ea = eta.embed_numpy(a)[0]
    eb = eta.embed_numpy(b)[0]
    return angle_between(ea, eb)


@dataclass
class FrechetResult:
    value: float
    clamped: float = 0.0       # magnitude of negative eigenvalues set to zero
    regularized: bool = False  # 1e-6 I added to singular covariances


def frechet_distance(mu1, cov1, mu2, cov2, eps=1e-6):
    """|mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}).

    The trace term uses the symmetric form (S1^{1/2} S2 S1^{1/2})^{1/2}, which has
    the same eigenvalues as (S1 S2)^{1/2}.
    """
    mu1, mu2 = np.atleast_1d(mu1).astype(np.float64), np.atleast_1d(mu2).astype(np.float64)
    cov1, cov2 = np.atleast_2d(cov1).astype(np.float64), np.atleast_2d(cov2).astype(np.float64)
    regularized = False
    if min(np.linalg.eigvalsh(cov1).min(), np.linalg.eigvalsh(cov2).min()) <= 0.0:
        cov1 = cov1 + eps * np.eye(cov1.shape[0])
        cov2 = cov2 + eps * np.eye(cov2.shape[0])
        regularized = True
        log.info("ffd: singular covariance, added %g*I", eps)
    w1, v1 = np.linalg.eigh((cov1 + cov1.T) / 2)
    clamped = float(-w1[w1 < 0].sum())
    s1 = (v1 * np.sqrt(np.maximum(w1, 0.0))) @ v1.T
    m = s1 @ cov2 @ s1
    w = np.linalg.eigvalsh((m + m.T) / 2)
    clamped += float(-w[w < 0].sum())
    tr_sqrt = float(np.sqrt(np.maximum(w, 0.0)).sum())
    diff = mu1 - mu2
    value = float(diff @ diff + np.trace(cov1) + np.trace(cov2) - 2.0 * tr_sqrt)
    return FrechetResult(value, clamped, regularized)


def ffd(feats_a, feats_b):
    """Frechet distance between two (n, d) feature sets (n >= 2 each)."""
    a = np.asarray(feats_a, dtype=np.float64)
    b = np.asarray(feats_b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("ffd: each set needs at least 2 samples")
    cov_a = np.atleast_2d(np.cov(a, rowvar=False))
    cov_b = np.atleast_2d(np.cov(b, rowvar=False))
    return frechet_distance(a.mean(0), cov_a, b.mean(0), cov_b)


@dataclass
class MetricReport:
    names: list
    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)
    idd: list = field(default_factory=list)
    ffd: float = None
    config: dict = field(default_factory=dict)

    def summary(self):
        line = (f"n={len(self.names)} psnr={np.mean(self.psnr):.3f} ssim={np.mean(self.ssim):.4f} "
                f"idd={np.mean(self.idd):.4f}")
        if self.ffd is not None:
            line += f" ffd={self.ffd:.5f}"
        return line

    def to_csv(self):
        rows = ["name,psnr,ssim,idd"]
        rows += [f"{n},{p:.6f},{s:.6f},{i:.6f}" for n, p, s, i in zip(self.names, self.psnr, self.ssim, self.idd)]
        return "\n".join(rows) + "\n"


def evaluate(names, outputs, targets, eta):
    """Per-image PSNR/SSIM/IDD in name order, plus FFD between the two sets."""
    rep = MetricReport(list(names))
    for o, t in zip(outputs, targets):
        rep.psnr.append(psnr(o, t))
        rep.ssim.append(ssim(o, t) if min(o.shape[:2]) >= 11 else float("nan"))
        rep.idd.append(idd(o, t, eta))
    if len(outputs) >= 2 and len(targets) >= 2:
        fa = eta.embed_numpy(np.stack(outputs))
        fb = eta.embed_numpy(np.stack(targets))
        rep.ffd = ffd(fa, fb).value
    return rep
