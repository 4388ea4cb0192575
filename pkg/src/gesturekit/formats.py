"""Binary file formats.

``FMC1``  raw radar cube: magic, u32 L, u32 P, u32 N, then interleaved f32
          (re, im) in (l, p, n) row-major order. A recording file is a plain
          concatenation of such records, one per frame.
``RSA1``  RSA image: magic, u8 label (255 = unlabeled), then 128*128*3 f32
          in (time, range, channel) row-major order.
``GNN1``  container for checkpoints: magic, u32 header length, UTF-8 JSON
          header, then f32 arrays in the order listed under ``arrays``.

All integers and floats are little-endian.
"""
from __future__ import annotations

import json
import os
import struct

import numpy as np

RSA_SHAPE = (128, 128, 3)
UNLABELED = 255


class FormatError(ValueError):
    """A file does not match its declared binary format."""

    def __init__(self, path, offset: int, message: str):
        self.path, self.offset = str(path), offset
        super().__init__(f"{path}: offset {offset}: {message}")


def _read(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _atomic_write(path, data: bytes) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


# ---------------------------------------------------------------- FMC1

def encode_cube(samples: np.ndarray) -> bytes:
    samples = np.asarray(samples)
    if samples.ndim != 3:
        raise ValueError(f"cube must be (L, P, N), got shape {samples.shape}")
    inter = np.empty(samples.shape + (2,), dtype="<f4")
    inter[..., 0] = samples.real
    inter[..., 1] = samples.imag
    return b"FMC1" + struct.pack("<3I", *samples.shape) + inter.tobytes()


def write_cubes(path, cubes) -> None:
    _atomic_write(path, b"".join(encode_cube(c) for c in cubes))


def read_cubes(path) -> list[np.ndarray]:
    """Read every FMC1 record in ``path`` as complex64 arrays."""
    data = _read(path)
    out, pos = [], 0
    if not data:
        raise FormatError(path, 0, "empty file")
    while pos < len(data):
        if data[pos:pos + 4] != b"FMC1":
            raise FormatError(path, pos, f"bad magic {data[pos:pos + 4]!r}")
        if pos + 16 > len(data):
            raise FormatError(path, pos + 4, "truncated header")
        dims = struct.unpack_from("<3I", data, pos + 4)
        if 0 in dims:
            raise FormatError(path, pos + 4, f"zero dimension in {dims}")
        pos += 16
        nbytes = int(np.prod(dims)) * 8
        if pos + nbytes > len(data):
            raise FormatError(path, pos, f"expected {nbytes} payload bytes, {len(data) - pos} left")
        inter = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=pos).reshape(dims + (2,))
        out.append((inter[..., 0] + 1j * inter[..., 1]).astype(np.complex64))
        pos += nbytes
    return out


# ---------------------------------------------------------------- RSA1

def encode_rsa(image: np.ndarray, label: int | None = None) -> bytes:
    image = np.asarray(image)
    if image.shape != RSA_SHAPE:
        raise ValueError(f"RSA image must have shape {RSA_SHAPE}, got {image.shape}")
    code = UNLABELED if label is None else int(label)
    if not 0 <= code <= 255:
        raise ValueError(f"label {label} does not fit in u8")
    return b"RSA1" + struct.pack("<B", code) + image.astype("<f4").tobytes()


def write_rsa(path, image: np.ndarray, label: int | None = None) -> None:
    _atomic_write(path, encode_rsa(image, label))


def read_rsa(path) -> tuple[np.ndarray, int | None]:
    data = _read(path)
    if data[:4] != b"RSA1":
        raise FormatError(path, 0, f"bad magic {data[:4]!r}")
    if len(data) < 5:
        raise FormatError(path, 4, "missing label byte")
    expected = 5 + int(np.prod(RSA_SHAPE)) * 4
    if len(data) != expected:
        raise FormatError(path, 5, f"expected {expected} bytes in total, found {len(data)}")
    label = data[4]
    image = np.frombuffer(data, dtype="<f4", offset=5).reshape(RSA_SHAPE).astype(np.float32)
    return image, (None if label == UNLABELED else int(label))


# ---------------------------------------------------------------- GNN1

def write_container(path, header: dict, arrays: list[tuple[str, np.ndarray]]) -> None:
    header = dict(header)
    header["arrays"] = [{"name": name, "shape": list(arr.shape)} for name, arr in arrays]
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = b"".join(np.ascontiguousarray(arr, dtype="<f4").tobytes() for _, arr in arrays)
    _atomic_write(path, b"GNN1" + struct.pack("<I", len(head)) + head + body)


def read_container(path) -> tuple[dict, list[tuple[str, np.ndarray]]]:
    data = _read(path)
    if data[:4] != b"GNN1":
        raise FormatError(path, 0, f"bad magic {data[:4]!r}")
    if len(data) < 8:
        raise FormatError(path, 4, "truncated header length")
    (hlen,) = struct.unpack_from("<I", data, 4)
    try:
        header = json.loads(data[8:8 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(path, 8, f"unreadable JSON header: {exc}") from None
    pos = 8 + hlen
    arrays = []
    for entry in header.get("arrays", []):
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        if pos + 4 * count > len(data):
            raise FormatError(path, pos, f"array {entry['name']!r} truncated")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32)
        arrays.append((entry["name"], arr))
        pos += 4 * count
    if pos != len(data):
        raise FormatError(path, pos, f"{len(data) - pos} trailing bytes")
    return header, arrays
