"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"PFCK"  u32 version  u32 count
    count x { u32 name_len, name (UTF-8), u8 dtype, u32 rank, rank x u64 extent, payload }
    u32 CRC32 of every preceding byte

dtype tags: 1 = float64, 2 = int64, 3 = uint8. Payloads are raw little-endian
row-major bytes, so a save/load round trip is bit-exact.
"""
import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"PFCK"
VERSION = 1
DTYPES = {1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("u1")}
TAGS = {np.dtype("float64"): 1, np.dtype("int64"): 2, np.dtype("uint8"): 3}
CONFIG_KEY = "__config__"


class CheckpointError(ValueError):
    pass


def dumps(tensors):
    """Serialise a name -> ndarray mapping (insertion order kept)."""
    out = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        tag = TAGS.get(arr.dtype)
        if tag is None:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw)
        out.append(struct.pack("<BI", tag, arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=DTYPES[tag]).tobytes())
    body = b"".join(out)
    return body + struct.pack("<I", zlib.crc32(body))


def loads(blob):
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint CRC mismatch (file corrupted)")
    version, count = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    pos = 12
    tensors = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", body, pos)
        pos += 4
        name = body[pos:pos + n].decode("utf-8")
        pos += n
        tag, rank = struct.unpack_from("<BI", body, pos)
        pos += 5
        if tag not in DTYPES:
            raise CheckpointError(f"{name}: unknown dtype tag {tag}")
        shape = struct.unpack_from(f"<{rank}Q", body, pos)
        pos += 8 * rank
        dt = DTYPES[tag]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        tensors[name] = np.frombuffer(body, dt, count=nbytes // dt.itemsize, offset=pos).reshape(shape).copy()
        pos += nbytes
    if pos != len(body):
        raise CheckpointError("trailing bytes after the last tensor")
    return tensors


def save(path, tensors, config_text=None):
    tensors = dict(tensors)
    if config_text is not None:
        tensors[CONFIG_KEY] = np.frombuffer(config_text.encode("utf-8"), dtype=np.uint8)
    Path(path).write_bytes(dumps(tensors))


def load(path):
    """Returns ``(tensors, config_text or None)``."""
    tensors = loads(Path(path).read_bytes())
    cfg = tensors.pop(CONFIG_KEY, None)
    return tensors, (cfg.tobytes().decode("utf-8") if cfg is not None else None)
