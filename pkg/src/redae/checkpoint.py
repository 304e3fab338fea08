"""Binary checkpoint format.

Layout (all integers little-endian):

    magic  b"REDAE"
    version u16 (currently 1)
    variant: u16 length + utf-8 bytes
    in_channels u32, kernel u32, classes u32
    widths: u32 count + u32 each
    class_weights: f64 per class
    tensors: u32 count, then per tensor
        name (u16 length + utf-8), dims u32 x4, payload f32 little-endian
    crc32 u32 of every preceding byte

Parameters are stored in float32; loading converts back to float64, so a
save -> load -> save round trip is byte-stable.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import DataError
from .layers import ClassWeights
from .network import Network, build, named_buffers, named_parameters
from .tensor import Rng

MAGIC = b"REDAE"
VERSION = 1


def _pack_str(s: str) -> bytes:
    raw = s.encode()
    return struct.pack("<H", len(raw)) + raw


def save(net: Network, path: str) -> None:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<H", VERSION)
    out += _pack_str(net.variant)
    out += struct.pack("<III", net.in_channels, net.kernel, net.classes)
    out += struct.pack("<I", len(net.widths))
    for wd in net.widths:
        out += struct.pack("<I", wd)
    out += np.asarray(net.class_weights.w, dtype="<f8").tobytes()

    tensors = [(name, t.data) for name, t in named_parameters(net)]
    tensors += [(name, buf.reshape(1, -1, 1, 1)) for name, buf in named_buffers(net)]
    out += struct.pack("<I", len(tensors))
    for name, arr in tensors:
        out += _pack_str(name)
        out += struct.pack("<IIII", *arr.shape)
        out += arr.astype("<f4").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    with open(path, "wb") as f:
        f.write(out)


class _Reader:
    def __init__(self, raw: bytes, path: str):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise DataError(f"{self.path}: truncated checkpoint")
        b = self.raw[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode()


def load(path: str) -> Network:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(MAGIC) + 4 or raw[:len(MAGIC)] != MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    (crc_stored,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(raw[:-4]) != crc_stored:
        raise DataError(f"{path}: CRC mismatch, file corrupt")

    r = _Reader(raw[:-4], path)
    r.take(len(MAGIC))
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    variant = r.string()
    in_channels, kernel, classes = r.unpack("<III")
    (n_widths,) = r.unpack("<I")
    widths = [r.unpack("<I")[0] for _ in range(n_widths)]
    weights = np.frombuffer(r.take(8 * classes), dtype="<f8").copy()

    net = build(variant, widths, classes, Rng(0), in_channels=in_channels, kernel=kernel)
    net.class_weights = ClassWeights(weights)
    params = dict(named_parameters(net))
    buffers = dict(named_buffers(net))
    (n_tensors,) = r.unpack("<I")
    for _ in range(n_tensors):
        name = r.string()
        shape = r.unpack("<IIII")
        count = int(np.prod(shape))
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").astype(np.float64).reshape(shape)
        if name in params:
            if params[name].data.shape != shape:
                raise DataError(f"{path}: tensor {name!r} shape {shape} does not match topology")
            params[name].data = arr
        elif name in buffers:
            buffers[name][...] = arr.reshape(-1)
        else:
            raise DataError(f"{path}: unknown tensor {name!r}")
    net.set_mode("eval")
    return net
