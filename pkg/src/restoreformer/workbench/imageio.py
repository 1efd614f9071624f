"""Image files: binary PPM (P6, maxval 255) always, PGM (P5) for grayscale maps,
PNG through Pillow when it is installed."""
from pathlib import Path

import numpy as np


def to_uint8(img):
    return np.clip(np.floor(np.asarray(img, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def write_ppm(path, img):
    u8 = to_uint8(img)
    if u8.ndim == 2:
        header = f"P5\n{u8.shape[1]} {u8.shape[0]}\n255\n".encode()
    else:
        if u8.shape[2] != 3:
            raise ValueError(f"PPM needs 3 channels, got {u8.shape}")
        header = f"P6\n{u8.shape[1]} {u8.shape[0]}\n255\n".encode()
    Path(path).write_bytes(header + u8.tobytes())


def _tokens(data):
    """Yield header tokens and the offset just past the last one."""
    pos = 0
    while True:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        yield data[start:pos], pos


def read_ppm(path):
    data = Path(path).read_bytes()
    toks = _tokens(data)
    magic, _ = next(toks)
    if magic not in (b"P6", b"P5"):
        raise ValueError(f"{path}: not a binary PPM/PGM (magic {magic!r})")
    w, _ = next(toks)
    h, _ = next(toks)
    maxval, pos = next(toks)
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported, got {maxval}")
    ch = 3 if magic == b"P6" else 1
    pix = np.frombuffer(data, np.uint8, count=w * h * ch, offset=pos + 1)
    img = pix.reshape(h, w, ch).astype(np.float64) / 255.0
    return img if ch == 3 else img[..., 0]


def png_available():
    try:
        import PIL  # noqa: F401
    except ImportError:
        return False
    return True


def write_image(path, img):
    path = Path(path)
    if path.suffix.lower() == ".png":
        if not png_available():
            raise RuntimeError("PNG output needs Pillow (pip install 'artifact[png]')")
        from PIL import Image
        Image.fromarray(to_uint8(img)).save(path)
    else:
        write_ppm(path, img)


def read_image(path):
    path = Path(path)
    if path.suffix.lower() == ".png":
        if not png_available():
            raise RuntimeError("PNG input needs Pillow (pip install 'artifact[png]')")
        from PIL import Image
        return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
    return read_ppm(path)
