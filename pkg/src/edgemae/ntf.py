"""NTF1 tensor files, PGM previews and tab-separated manifests."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"NTF1"


class FormatError(ValueError):
    pass


def encode_ntf(array) -> bytes:
    arr = np.ascontiguousarray(np.asarray(array, dtype="<f4"))
    header = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes(order="C")


def decode_ntf(data: bytes) -> np.ndarray:
    if len(data) < 8 or data[:4] != MAGIC:
        raise FormatError("not an NTF1 stream (bad magic)")
    (rank,) = struct.unpack_from("<I", data, 4)
    off = 8 + 4 * rank
    if len(data) < off:
        raise FormatError("truncated NTF1 header")
    dims = struct.unpack_from(f"<{rank}I", data, 8)
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    if len(data) != off + 4 * count:
        raise FormatError(f"NTF1 payload size mismatch: dims {dims}, {len(data) - off} bytes")
    return np.frombuffer(data, dtype="<f4", offset=off, count=count).reshape(dims).astype(np.float32)


def write_ntf(path, array) -> None:
    Path(path).write_bytes(encode_ntf(array))


def read_ntf(path) -> np.ndarray:
    return decode_ntf(Path(path).read_bytes())


def write_pgm(path, pixels) -> None:
    """Binary P5 preview; intensity = round(pixel * 255)."""
    px = np.asarray(pixels, dtype=np.float64)
    if px.ndim != 2:
        raise ValueError("PGM needs a 2D grid")
    data = np.clip(np.rint(np.clip(px, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + data.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5" or int(parts[3]) != 255:
        raise FormatError(f"{path}: unsupported PGM")
    w, h = int(parts[1]), int(parts[2])
    body = raw[len(raw) - w * h:]
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w)
