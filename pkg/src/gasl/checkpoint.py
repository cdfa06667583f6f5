"""Binary model checkpoints.

Layout (all integers little-endian)::

    offset  size  field
    0       8     magic  b"GASLNET\\0"
    8       4     uint32 format version (currently 1)
    12      4     uint32 header length H in bytes
    16      H     UTF-8 JSON header: layers, input_shape, dense_grouping,
                  and the ordered list of (layer, name, shape) arrays
    16+H    8*N   float64 little-endian payload, arrays concatenated in
                  header order, each in C order
    end-4   4     uint32 CRC-32 of everything before it

A file with the wrong magic, an unknown version, a short payload or a bad
checksum raises :class:`FormatError` (or its :class:`LengthError` subclass).
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from .errors import FormatError, LengthError
from .fileio import atomic_write
from .nn import LayerSpec, Network

MAGIC = b"GASLNET\0"
VERSION = 1
_PREFIX = struct.Struct("<8sII")
_LE64 = np.dtype("<f8")


def dumps(net):
    arrays, entries = [], []
    for i, layer in enumerate(net.params):
        for name in sorted(layer):
            a = layer[name]
            entries.append([i, name, list(a.shape)])
            arrays.append(np.ascontiguousarray(a, dtype=_LE64).tobytes())
    header = json.dumps({
        "layers": [[s.kind, s.dims] for s in net.layers],
        "input_shape": list(net.input_shape),
        "dense_grouping": net.dense_grouping,
        "arrays": entries,
    }, sort_keys=True).encode("utf-8")
    body = _PREFIX.pack(MAGIC, VERSION, len(header)) + header + b"".join(arrays)
    return body + struct.pack("<I", zlib.crc32(body))


def loads(buf):
    buf = bytes(buf)
    if len(buf) < _PREFIX.size + 4:
        raise LengthError(f"checkpoint truncated: {len(buf)} bytes")
    magic, version, hlen = _PREFIX.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"not a checkpoint: magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (crc,) = struct.unpack_from("<I", buf, len(buf) - 4)
    if zlib.crc32(buf[:-4]) != crc:
        raise FormatError("checkpoint checksum mismatch")
    start = _PREFIX.size
    try:
        header = json.loads(buf[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint header: {exc}") from None
    layers = [LayerSpec(kind, dims) for kind, dims in header["layers"]]
    net = Network(layers, tuple(header["input_shape"]), dense_grouping=header["dense_grouping"])
    offset = start + hlen
    end = len(buf) - 4
    for i, name, shape in header["arrays"]:
        size = int(np.prod(shape)) * 8
        if offset + size > end:
            raise LengthError("checkpoint payload shorter than its header declares")
        a = np.frombuffer(buf, dtype=_LE64, count=size // 8, offset=offset).reshape(shape)
        if net.params[i][name].shape != tuple(shape):
            raise FormatError(f"array {name} of layer {i} has shape {shape}, architecture expects "
                              f"{net.params[i][name].shape}")
        net.params[i][name] = a.astype(np.float64)
        offset += size
    if offset != end:
        raise FormatError(f"{end - offset} unexpected trailing bytes in checkpoint")
    return net


def save(net, path):
    atomic_write(path, dumps(net))


def load(path):
    try:
        with open(path, "rb") as f:
            return loads(f.read())
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc.strerror}") from None
