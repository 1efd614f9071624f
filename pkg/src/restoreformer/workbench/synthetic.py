"""Procedural face-like images with a known layout.

Each face is a vertical background gradient, a skin-tone ellipse, two eyes
(white sclera with a near-black iris) and a mouth arc. Positions are drawn in
normalised coordinates from inside the configured ROI boxes, so the same seed
gives the same face at any resolution. Pixel values are snapped to the 8-bit
grid so images survive a PPM round trip unchanged.
"""
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..losses import RoiBoxes
from ..rng import Rng
from .imageio import read_ppm, write_ppm

MANIFEST = "manifest.txt"


@dataclass(frozen=True)
class SyntheticFaceSpec:
    seed: int
    bg_top: tuple
    bg_bottom: tuple
    skin: tuple
    face_center: tuple
    face_radii: tuple
    left_eye: tuple
    right_eye: tuple
    iris_radius: float
    iris_color: tuple
    mouth_center: tuple
    mouth_half_width: float
    mouth_curve: float
    lip_color: tuple

    def to_text(self):
        parts = []
        for k, v in asdict(self).items():
            if isinstance(v, tuple):
                v = "(" + " ".join(f"{x:.6f}" for x in v) + ")"
            elif isinstance(v, float):
                v = f"{v:.6f}"
            parts.append(f"{k}={v}")
        return ",".join(parts)


def _in_box(rng, box, margin):
    x0, y0, x1, y1 = box
    mx, my = margin * (x1 - x0), margin * (y1 - y0)
    return (float(rng.uniform(x0 + mx, x1 - mx)), float(rng.uniform(y0 + my, y1 - my)))


def sample_face(seed, boxes=None):
    boxes = boxes or RoiBoxes()
    rng = Rng(seed, 0xFACE)
    tone = rng.uniform(0.75, 1.05)
    mouth_box = boxes.mouth
    return SyntheticFaceSpec(
        seed=int(seed),
        bg_top=tuple(rng.uniform(0.35, 0.95, 3)),
        bg_bottom=tuple(rng.uniform(0.35, 0.95, 3)),
        skin=tuple(np.minimum(np.array([0.92, 0.72, 0.58]) * tone, 1.0)),
        face_center=(0.5 + float(rng.uniform(-0.02, 0.02)), 0.53 + float(rng.uniform(-0.02, 0.02))),
        face_radii=(float(rng.uniform(0.38, 0.44)), float(rng.uniform(0.44, 0.50))),
        left_eye=_in_box(rng, boxes.left_eye, 0.38),
        right_eye=_in_box(rng, boxes.right_eye, 0.38),
        iris_radius=float(rng.uniform(0.035, 0.05)),
        iris_color=tuple(rng.uniform(0.02, 0.10, 3)),
        mouth_center=(float(rng.uniform(0.47, 0.53)),
                      float(rng.uniform(mouth_box[1] + 0.3 * (mouth_box[3] - mouth_box[1]),
                                        mouth_box[3] - 0.4 * (mouth_box[3] - mouth_box[1])))),
        mouth_half_width=float(rng.uniform(0.11, 0.17)),
        mouth_curve=float(rng.uniform(-1.2, 2.0)),
        lip_color=(float(rng.uniform(0.65, 0.85)), float(rng.uniform(0.15, 0.3)), float(rng.uniform(0.2, 0.35))),
    )


def _soft(sd, px):
    """Coverage of a shape from its signed distance (negative inside), ~1 px ramp."""
    return np.clip(0.5 - sd / px, 0.0, 1.0)[..., None]


def render_face(spec, size):
    c = (np.arange(size) + 0.5) / size
    v, u = np.meshgrid(c, c, indexing="ij")
    px = 1.0 / size
    t = v[..., None]
    img = (1 - t) * np.array(spec.bg_top) + t * np.array(spec.bg_bottom)

    (fx, fy), (rx, ry) = spec.face_center, spec.face_radii
    face_sd = (np.sqrt(((u - fx) / rx) ** 2 + ((v - fy) / ry) ** 2) - 1.0) * min(rx, ry)
    img = img + _soft(face_sd, px) * (np.array(spec.skin) - img)

    for ex, ey in (spec.left_eye, spec.right_eye):
        sclera_sd = (np.sqrt(((u - ex) / 0.085) ** 2 + ((v - ey) / 0.05) ** 2) - 1.0) * 0.05
        img = img + _soft(sclera_sd, px) * (np.array([0.97, 0.97, 0.95]) - img)
        iris_sd = np.sqrt((u - ex) ** 2 + (v - ey) ** 2) - spec.iris_radius
        img = img + _soft(iris_sd, px) * (np.array(spec.iris_color) - img)

    mx, my = spec.mouth_center
    dx = u - mx
    arc_y = my + spec.mouth_curve * dx * dx
    lip_sd = np.maximum(np.abs(v - arc_y) - 0.022, np.abs(dx) - spec.mouth_half_width)
    img = img + _soft(lip_sd, px) * (np.array(spec.lip_color) - img)
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5) / 255.0


def make_faces(n, size, seed, boxes=None):
    """(n, size, size, 3) images and their specs; face i uses seed (seed, i)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if size % 32:
        raise ValueError(f"size {size} not divisible by 32")
    specs = [sample_face(int(Rng(seed, 0xDA7A, i).integers(0, 2 ** 31)), boxes) for i in range(n)]
    return np.stack([render_face(s, size) for s in specs]), specs


def gen_data(out_dir, n, size, seed, boxes=None):
    """Write n PPM faces plus a manifest; returns the list of file names."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    images, specs = make_faces(n, size, seed, boxes)
    names = [f"face_{i:04d}.ppm" for i in range(n)]
    lines = [f"# n={n} size={size} seed={seed}"]
    for name, img, spec in zip(names, images, specs):
        write_ppm(out / name, img)
        lines.append(f"{name}\t{spec.to_text()}")
    (out / MANIFEST).write_text("\n".join(lines) + "\n")
    return names


def load_dataset(path):
    """(names, images) in manifest order."""
    path = Path(path)
    manifest = path / MANIFEST
    if manifest.exists():
        names = [ln.split("\t", 1)[0] for ln in manifest.read_text().splitlines()
                 if ln.strip() and not ln.startswith("#")]
    else:
        names = sorted(p.name for p in path.glob("*.ppm"))
    if not names:
        raise FileNotFoundError(f"no images found in {path}")
    return names, np.stack([read_ppm(path / n) for n in names])


def dark_centroids(img, threshold=0.2):
    """Centroids (normalised x, y) of near-black pixels in the left and right halves."""
    H, W = img.shape[:2]
    luma = img @ np.array([0.299, 0.587, 0.114])
    ys, xs = np.nonzero(luma < threshold)
    u, v = (xs + 0.5) / W, (ys + 0.5) / H
    out = []
    for sel in (u < 0.5, u >= 0.5):
        out.append((float(u[sel].mean()), float(v[sel].mean())) if sel.any() else None)
    return out
