"""Binary checkpoint format for :class:`~textsmooth.transformer.TransformerParams`.

Layout (little-endian)::

    b"TSCKPT\\0\\0"  u32 header_len  header (UTF-8 JSON: version, config, vocab)
    repeated per parameter, in config order:
        u32 name_len  name  u32 ndim  u64 dims[ndim]  f64 values[prod(dims)]
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .tensor import Tensor
from .text import Vocabulary
from .transformer import ModelConfig, TransformerParams, parameter_shapes

MAGIC = b"TSCKPT\0\0"
VERSION = 1


def save_checkpoint(path, params, vocab=None, extra=None):
    header = {
        "version": VERSION,
        "config": params.config.to_dict(),
        "vocab": vocab.id_to_token if vocab is not None else None,
        "extra": extra or {},
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        for name, t in params.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", t.data.ndim))
            fh.write(struct.pack(f"<{t.data.ndim}Q", *t.shape))
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Return ``(params, vocab_or_None, header)``; rejects version and shape mismatches."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    if not data.startswith(MAGIC):
        raise FormatError(f"{path}: not a checkpoint file")
    offset = len(MAGIC)
    (hlen,) = struct.unpack_from("<I", data, offset)
    offset += 4
    header = json.loads(data[offset : offset + hlen].decode("utf-8"))
    offset += hlen
    if header.get("version") != VERSION:
        raise FormatError(f"{path}: checkpoint version {header.get('version')} is not supported (expected {VERSION})")
    config = ModelConfig(**header["config"])
    expected = parameter_shapes(config)

    tensors = {}
    for name, shape in expected.items():
        try:
            (nlen,) = struct.unpack_from("<I", data, offset)
            offset += 4
            stored = data[offset : offset + nlen].decode("utf-8")
            offset += nlen
            (ndim,) = struct.unpack_from("<I", data, offset)
            offset += 4
            dims = struct.unpack_from(f"<{ndim}Q", data, offset)
            offset += 8 * ndim
        except struct.error as exc:
            raise FormatError(f"{path}: truncated before parameter {name}") from exc
        if stored != name:
            raise FormatError(f"{path}: expected parameter {name}, found {stored}")
        if tuple(dims) != shape:
            raise FormatError(f"{path}: {name} has shape {tuple(dims)}, config implies {shape}")
        count = int(np.prod(dims))
        if offset + 8 * count > len(data):
            raise FormatError(f"{path}: truncated inside parameter {name}")
        values = np.frombuffer(data, dtype="<f8", count=count, offset=offset).astype(np.float64)
        offset += 8 * count
        tensors[name] = Tensor(values.reshape(shape), requires_grad=True)
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes")
    vocab = Vocabulary(header["vocab"]) if header.get("vocab") else None
    return TransformerParams(config, tensors), vocab, header
