"""Text smoothing: mix one-hot inputs with the teacher's MLM word distributions.

For each instance the frozen teacher encodes the raw ids once (no [MASK]
corruption, no dropout), its tied MLM head yields a distribution over the
vocabulary at every position, and the smoothed input is

    smoothed = lam * onehot(ids) + (1 - lam) * mlm_distribution

Padding always stays one-hot at [PAD]; [CLS]/[SEP] can optionally be exempted
as well.
"""

from __future__ import annotations

import hashlib
import json
import struct
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from . import transformer as tf
from .errors import FormatError, ShapeError, SmoothingError
from .text import CLS_ID, MASK_ID, PAD_ID, SEP_ID

CACHE_MAGIC = b"TSMOOTH\0"
CACHE_VERSION = 1


@dataclass(frozen=True)
class SmoothingConfig:
    lam: float = 0.5
    exempt_special_tokens: bool = False
    exempt_padding: bool = True

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise SmoothingError(f"lambda must lie in [0, 1], got {self.lam}")
        if not self.exempt_padding:
            raise SmoothingError("padding positions are always exempt from smoothing")


@dataclass
class SmoothedInstance:
    distributions: np.ndarray
    token_ids: np.ndarray
    position_ids: np.ndarray
    segment_ids: np.ndarray
    attention_mask: np.ndarray
    label: int

    @property
    def seq_len(self):
        return self.distributions.shape[0]


class ForwardCounter:
    """Thread-safe count of teacher encoder forward passes."""

    def __init__(self):
        self._lock = threading.Lock()
        self._n = 0

    def add(self, n=1):
        with self._lock:
            self._n += n

    @property
    def value(self):
        return self._n


def mlm_distribution(teacher, instance, counter=None):
    """Row-stochastic ``[seq_len, vocab_size]`` MLM prediction for the raw ids.

    ``teacher`` must be the pretrained, not task-fine-tuned, model.
    """
    ids = np.asarray(instance.token_ids)
    if ids.max(initial=0) >= teacher.config.vocab_size:
        raise SmoothingError(
            f"instance token id {ids.max()} is outside the teacher vocabulary of {teacher.config.vocab_size}"
        )
    if np.any(ids == MASK_ID):
        raise SmoothingError("[MASK] must never be fed to the teacher during smoothing")
    embedded = tf.embed_input(ids, teacher, instance.position_ids, instance.segment_ids)
    hidden = tf.forward_encoder(teacher, embedded, instance.attention_mask, training=False)
    if counter is not None:
        counter.add(1)
    return T.softmax_rows(tf.mlm_logits(hidden, teacher)).data


def _exempt_positions(token_ids, config):
    exempt = token_ids == PAD_ID
    if config.exempt_special_tokens:
        exempt |= (token_ids == CLS_ID) | (token_ids == SEP_ID)
    return exempt


def smooth_text(instance, mlm_dist, config):
    """Interpolate the one-hot rows of ``instance`` with ``mlm_dist``."""
    ids = np.asarray(instance.token_ids)
    mlm_dist = np.asarray(mlm_dist, dtype=np.float64)
    if mlm_dist.ndim != 2 or mlm_dist.shape[0] != len(ids):
        raise ShapeError(f"MLM distribution shape {mlm_dist.shape} does not match sequence length {len(ids)}")
    if np.any(np.abs(mlm_dist.sum(axis=1) - 1.0) > 1e-6) or np.any(mlm_dist < 0):
        raise SmoothingError("MLM distribution rows must be probability distributions")
    onehot = np.zeros_like(mlm_dist)
    onehot[np.arange(len(ids)), ids] = 1.0
    lam = config.lam
    smoothed = lam * onehot + (1.0 - lam) * mlm_dist
    exempt = _exempt_positions(ids, config)
    smoothed[exempt] = onehot[exempt]
    return SmoothedInstance(
        distributions=smoothed,
        token_ids=ids.copy(),
        position_ids=np.asarray(instance.position_ids).copy(),
        segment_ids=np.asarray(instance.segment_ids).copy(),
        attention_mask=np.asarray(instance.attention_mask).copy(),
        label=int(instance.label),
    )


def smooth_dataset(teacher, dataset, config, cache_dir=None):
    """Smooth every instance of ``dataset``; returns ``(smoothed, forward_count)``.

    One teacher forward per instance.  With ``cache_dir`` set, a cache file
    keyed by teacher, dataset, lambda and flags is reused or written; a cache
    hit performs no forwards.
    """
    path = None
    if cache_dir is not None:
        key = cache_key(teacher.checksum(), dataset.checksum(), config)
        path = Path(cache_dir) / f"smoothed-{key[:16]}.cache"
        if path.exists():
            smoothed, _ = load_smoothed(path)
            return smoothed, 0
    counter = ForwardCounter()
    smoothed = [smooth_text(x, mlm_distribution(teacher, x, counter), config) for x in dataset]
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        save_smoothed(path, smoothed, config, teacher.checksum(), dataset_checksum=dataset.checksum())
    return smoothed, counter.value


def cache_key(teacher_checksum, dataset_checksum, config):
    blob = json.dumps(
        [teacher_checksum, dataset_checksum, repr(float(config.lam)), config.exempt_special_tokens, config.exempt_padding]
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# cache file
# ---------------------------------------------------------------------------
#
# magic, u32 header length, JSON header, then per instance:
#   i64 token_ids[L], i64 position_ids[L], i64 segment_ids[L], i64 mask[L],
#   i64 label, f64 distributions[L * V]      (all little-endian)


def save_smoothed(path, smoothed, config, teacher_checksum, dataset_checksum=""):
    seq_len = smoothed[0].seq_len if smoothed else 0
    vocab_size = smoothed[0].distributions.shape[1] if smoothed else 0
    header = {
        "version": CACHE_VERSION,
        "lambda": float(config.lam),
        "exempt_special_tokens": config.exempt_special_tokens,
        "exempt_padding": config.exempt_padding,
        "teacher_checksum": teacher_checksum,
        "dataset_checksum": dataset_checksum,
        "N": len(smoothed),
        "seq_len": seq_len,
        "vocab_size": vocab_size,
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        for x in smoothed:
            if x.distributions.shape != (seq_len, vocab_size):
                raise ShapeError("all smoothed instances must share one shape")
            for arr in (x.token_ids, x.position_ids, x.segment_ids, x.attention_mask):
                fh.write(np.asarray(arr, dtype="<i8").tobytes())
            fh.write(struct.pack("<q", x.label))
            fh.write(np.ascontiguousarray(x.distributions, dtype="<f8").tobytes())


def load_smoothed(path):
    """Read a cache file; returns ``(instances, header)``."""
    data = Path(path).read_bytes()
    if not data.startswith(CACHE_MAGIC):
        raise FormatError(f"{path}: not a smoothed-dataset cache")
    offset = len(CACHE_MAGIC)
    (hlen,) = struct.unpack_from("<I", data, offset)
    offset += 4
    header = json.loads(data[offset : offset + hlen].decode("utf-8"))
    offset += hlen
    if header.get("version") != CACHE_VERSION:
        raise FormatError(f"{path}: cache version {header.get('version')} != supported {CACHE_VERSION}")
    n, L, V = header["N"], header["seq_len"], header["vocab_size"]
    record = 8 * (4 * L + 1 + L * V)
    if len(data) - offset != n * record:
        raise FormatError(f"{path}: expected {n} records of {record} bytes, found {len(data) - offset} bytes")
    out = []
    for _ in range(n):
        ints = np.frombuffer(data, dtype="<i8", count=4 * L + 1, offset=offset).astype(np.int64)
        offset += 8 * (4 * L + 1)
        dist = np.frombuffer(data, dtype="<f8", count=L * V, offset=offset).astype(np.float64).reshape(L, V)
        offset += 8 * L * V
        out.append(
            SmoothedInstance(
                distributions=dist,
                token_ids=ints[:L],
                position_ids=ints[L : 2 * L],
                segment_ids=ints[2 * L : 3 * L],
                attention_mask=ints[3 * L : 4 * L],
                label=int(ints[4 * L]),
            )
        )
    return out, header


def smoothed_checksum(smoothed):
    h = hashlib.sha256()
    for x in smoothed:
        for arr in (x.token_ids, x.position_ids, x.segment_ids, x.attention_mask):
            h.update(np.asarray(arr, dtype="<i8").tobytes())
        h.update(struct.pack("<q", x.label))
        h.update(np.ascontiguousarray(x.distributions, dtype="<f8").tobytes())
    return h.hexdigest()
