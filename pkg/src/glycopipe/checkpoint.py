"""Bit-exact binary checkpoint container.

Layout (all integers little-endian):

    magic "GLYC" | version u16 | config_len u32 | config UTF-8 JSON
    | n_tensors u32 | directory entries | raw tensor data

Each directory entry is name_len u16 + name, dtype u8 (0 = f64, 1 = i8
with scale f64 + zero_point f64, 2 = u8 raw bytes), ndim u8, then one u32
per dimension. Raw data follows in directory order, C-contiguous. Tensors
are written in sorted name order and the config as canonical JSON, so the
same content always produces the same bytes.

Arbitrary-precision integers (cryptographic key material) are stored as
u8 tensors holding the big-endian magnitude, the tensor length acting as
the prefix.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"GLYC"
VERSION = 1

_DTYPE_F64 = 0
_DTYPE_I8 = 1
_DTYPE_U8 = 2


class CheckpointError(ValueError):
    pass


@dataclass
class QuantTensor:
    """8-bit tensor with affine dequantization parameters."""

    data: np.ndarray  # int8
    scale: float
    zero_point: float

    def dequantize(self) -> np.ndarray:
        return (self.data.astype(np.float64) - self.zero_point) * self.scale


def int_to_bytes_tensor(value: int) -> np.ndarray:
    """Encode a nonnegative int as a big-endian u8 magnitude tensor."""
    if value < 0:
        raise CheckpointError("only nonnegative integers are serialized")
    length = max(1, (value.bit_length() + 7) // 8)
    return np.frombuffer(value.to_bytes(length, "big"), dtype=np.uint8).copy()


def bytes_tensor_to_int(arr: np.ndarray) -> int:
    return int.from_bytes(np.asarray(arr, dtype=np.uint8).tobytes(), "big")


def save_checkpoint(path, tensors: dict, config: dict) -> None:
    """Write tensors (ndarray or QuantTensor) plus a config document."""
    config_bytes = json.dumps(config, sort_keys=True, separators=(",", ":")).encode(
        "utf-8"
    )
    directory = bytearray()
    payload = bytearray()
    for name in sorted(tensors):
        t = tensors[name]
        name_bytes = name.encode("utf-8")
        directory += struct.pack("<H", len(name_bytes)) + name_bytes
        if isinstance(t, QuantTensor):
            arr = np.ascontiguousarray(t.data, dtype=np.int8)
            shape = np.asarray(t.data).shape
            directory += struct.pack("<B", _DTYPE_I8)
            directory += struct.pack("<dd", float(t.scale), float(t.zero_point))
        else:
            # ascontiguousarray promotes 0-d to (1,); keep the true shape
            shape = np.asarray(t).shape
            arr = np.ascontiguousarray(t)
            if arr.dtype == np.uint8:
                directory += struct.pack("<B", _DTYPE_U8)
            else:
                arr = np.ascontiguousarray(arr, dtype="<f8")
                directory += struct.pack("<B", _DTYPE_F64)
        directory += struct.pack("<B", len(shape))
        for dim in shape:
            directory += struct.pack("<I", dim)
        payload += arr.tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(struct.pack("<I", len(config_bytes)))
        fh.write(config_bytes)
        fh.write(struct.pack("<I", len(tensors)))
        fh.write(bytes(directory))
        fh.write(bytes(payload))


def load_checkpoint(path) -> tuple[dict, dict]:
    """Read a checkpoint; returns (tensors, config)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError("bad magic; not a checkpoint file")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (config_len,) = struct.unpack_from("<I", blob, 6)
    off = 10
    config = json.loads(blob[off : off + config_len].decode("utf-8"))
    off += config_len
    (n_tensors,) = struct.unpack_from("<I", blob, off)
    off += 4

    entries = []
    for _ in range(n_tensors):
        (name_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off : off + name_len].decode("utf-8")
        off += name_len
        (dtype,) = struct.unpack_from("<B", blob, off)
        off += 1
        scale, zero_point = None, None
        if dtype == _DTYPE_I8:
            scale, zero_point = struct.unpack_from("<dd", blob, off)
            off += 16
        (ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, off) if ndim else ()
        off += 4 * ndim
        entries.append((name, dtype, shape, scale, zero_point))

    tensors: dict = {}
    for name, dtype, shape, scale, zero_point in entries:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if dtype == _DTYPE_F64:
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
            off += 8 * count
            tensors[name] = arr.reshape(shape).copy()
        elif dtype == _DTYPE_I8:
            arr = np.frombuffer(blob, dtype=np.int8, count=count, offset=off)
            off += count
            tensors[name] = QuantTensor(
                arr.reshape(shape).copy(), float(scale), float(zero_point)
            )
        elif dtype == _DTYPE_U8:
            arr = np.frombuffer(blob, dtype=np.uint8, count=count, offset=off)
            off += count
            tensors[name] = arr.reshape(shape).copy()
        else:
            raise CheckpointError(f"unknown dtype code {dtype}")
    return tensors, config
