"""Post-layer-norm transformer encoder with a tied MLM head and a [CLS] classifier.

The same code serves as teacher and student; they differ only in
``ModelConfig.n_layers``.  Token inputs come either as ids or as per-position
distributions over the vocabulary, the latter embedded as the expected row of
the word embedding matrix.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .tensor import Tensor

INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 2
    emb_size: int = 64
    n_heads: int = 4
    ffn_size: int = 128
    vocab_size: int = 200
    max_seq_len: int = 16
    n_segments: int = 2
    n_labels: int = 2
    dropout_rate: float = 0.1
    mlm_bias: bool = True

    def __post_init__(self):
        for name in ("n_layers", "emb_size", "n_heads", "ffn_size", "max_seq_len", "n_labels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.emb_size % self.n_heads:
            raise ConfigError(f"emb_size {self.emb_size} is not divisible by n_heads {self.n_heads}")
        if self.vocab_size < 5:
            raise ConfigError("vocab_size must be at least 5 (reserved tokens)")
        if self.n_segments != 2:
            raise ConfigError("n_segments is fixed at 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")

    def to_dict(self):
        return asdict(self)


def parameter_shapes(config):
    """Ordered ``name -> shape`` for every learnable tensor."""
    d, f, v = config.emb_size, config.ffn_size, config.vocab_size
    shapes = {
        "embeddings.word": (v, d),
        "embeddings.position": (config.max_seq_len, d),
        "embeddings.segment": (config.n_segments, d),
        "embeddings.ln.gain": (d,),
        "embeddings.ln.bias": (d,),
    }
    for i in range(config.n_layers):
        p = f"layers.{i}."
        for proj in ("query", "key", "value", "output"):
            shapes[p + f"attn.{proj}.weight"] = (d, d)
            shapes[p + f"attn.{proj}.bias"] = (d,)
        shapes[p + "attn.ln.gain"] = (d,)
        shapes[p + "attn.ln.bias"] = (d,)
        shapes[p + "ffn.in.weight"] = (d, f)
        shapes[p + "ffn.in.bias"] = (f,)
        shapes[p + "ffn.out.weight"] = (f, d)
        shapes[p + "ffn.out.bias"] = (d,)
        shapes[p + "ffn.ln.gain"] = (d,)
        shapes[p + "ffn.ln.bias"] = (d,)
    if config.mlm_bias:
        shapes["mlm.bias"] = (v,)
    shapes["classifier.weight"] = (d, config.n_labels)
    shapes["classifier.bias"] = (config.n_labels,)
    return shapes


class TransformerParams:
    """Named parameter tensors plus the config that shaped them.

    ``W`` (``embeddings.word``) is the only word matrix: the MLM head reads it
    transposed.  ``head_trained`` records whether the classifier head has been
    fitted to a task.
    """

    head_trained = False

    def __init__(self, config, tensors):
        expected = parameter_shapes(config)
        if list(tensors) != list(expected):
            missing = set(expected) ^ set(tensors)
            raise ShapeError(f"parameter names do not match config: {sorted(missing)[:5]}")
        for name, t in tensors.items():
            if t.shape != expected[name]:
                raise ShapeError(f"{name}: shape {t.shape} != expected {expected[name]}")
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.values())

    def items(self):
        return self.tensors.items()

    @property
    def W(self):
        return self.tensors["embeddings.word"]

    def layer(self, i):
        prefix = f"layers.{i}."
        return {k[len(prefix):]: t for k, t in self.tensors.items() if k.startswith(prefix)}

    def copy(self):
        out = TransformerParams(self.config, {k: Tensor(t.data.copy(), requires_grad=True) for k, t in self.items()})
        out.head_trained = self.head_trained
        return out

    def zero_grad(self):
        T.zero_grad(self)

    def checksum(self):
        h = hashlib.sha256()
        for name, t in self.items():
            h.update(name.encode("utf-8"))
            h.update(np.asarray(t.shape, dtype="<i8").tobytes())
            h.update(t.data.astype("<f8").tobytes())
        return h.hexdigest()

    def all_finite(self):
        return all(np.all(np.isfinite(t.data)) for t in self)


def _truncated_normal(rng, shape, std=INIT_STD):
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def init_params(config, seed=0):
    """Truncated normal (sigma 0.02, cut at 2 sigma) weights, zero biases, unit gains."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".gain"):
            data = np.ones(shape)
        elif name.endswith(".bias"):
            data = np.zeros(shape)
        else:
            data = _truncated_normal(rng, shape)
        tensors[name] = Tensor(data, requires_grad=True)
    return TransformerParams(config, tensors)


def init_student_from_teacher(teacher, student_config, seed=0):
    """Copy the embedding layer and the first ``n_layers`` encoder layers of ``teacher``.

    The classifier head is freshly initialised from ``seed``.
    """
    tc = teacher.config
    for name in ("emb_size", "n_heads", "ffn_size", "vocab_size", "max_seq_len", "mlm_bias"):
        if getattr(tc, name) != getattr(student_config, name):
            raise ConfigError(f"student {name}={getattr(student_config, name)} differs from teacher {getattr(tc, name)}")
    if student_config.n_layers > tc.n_layers:
        raise ConfigError(f"student has {student_config.n_layers} layers but the teacher only {tc.n_layers}")

    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in parameter_shapes(student_config).items():
        if name.startswith("classifier."):
            data = np.zeros(shape) if name.endswith(".bias") else _truncated_normal(rng, shape)
        else:
            data = teacher[name].data.copy()
        tensors[name] = Tensor(data, requires_grad=True)
    return TransformerParams(student_config, tensors)


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------


def embed_input(token_input, params, position_ids=None, segment_ids=None):
    """Sum of word, position and segment embeddings.

    ``token_input`` is an integer id array ``[..., seq_len]`` (row lookup in W)
    or a float distribution array / tensor ``[..., seq_len, vocab_size]``
    (expected embedding ``dist @ W``).  The two agree exactly on one-hot rows.
    """
    cfg = params.config
    W = params.W
    if isinstance(token_input, Tensor) or np.issubdtype(np.asarray(token_input).dtype, np.floating):
        dist = token_input if isinstance(token_input, Tensor) else np.asarray(token_input, dtype=np.float64)
        values = dist.data if isinstance(dist, Tensor) else dist
        if values.shape[-1] != cfg.vocab_size:
            raise ShapeError(f"distribution width {values.shape[-1]} != vocab_size {cfg.vocab_size}")
        if np.any(np.abs(values.sum(axis=-1) - 1.0) > 1e-6) or np.any(values < 0):
            raise ContractError("input distribution rows must be non-negative and sum to 1")
        words = T.expected_embedding(dist, W)
        seq_shape = values.shape[:-1]
    else:
        ids = np.asarray(token_input)
        if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
            raise ContractError(f"token id out of range [0, {cfg.vocab_size})")
        words = T.embedding(W, ids)
        seq_shape = ids.shape
    seq_len = seq_shape[-1]
    if seq_len > cfg.max_seq_len:
        raise ShapeError(f"sequence length {seq_len} exceeds max_seq_len {cfg.max_seq_len}")
    if position_ids is None:
        position_ids = np.broadcast_to(np.arange(seq_len), seq_shape)
    if segment_ids is None:
        segment_ids = np.zeros(seq_shape, dtype=np.int64)
    x = words + T.embedding(params["embeddings.position"], position_ids)
    return x + T.embedding(params["embeddings.segment"], segment_ids)


def _linear(x, params, prefix):
    return x @ params[prefix + ".weight"] + params[prefix + ".bias"]


def _attention(x, keep, params, p, cfg, training, rng, record):
    b, n, d = x.shape
    h = cfg.n_heads
    dh = d // h

    def heads(t):
        return t.reshape(b, n, h, dh).transpose(0, 2, 1, 3)

    q = heads(_linear(x, params, p + "attn.query"))
    k = heads(_linear(x, params, p + "attn.key"))
    v = heads(_linear(x, params, p + "attn.value"))
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
    probs = T.softmax(scores, axis=-1, mask=keep)
    if record is not None:
        record.append(probs.data)
    if training:
        probs = T.dropout(probs, cfg.dropout_rate, rng)
    ctx = (probs @ v).transpose(0, 2, 1, 3).reshape(b, n, d)
    return _linear(ctx, params, p + "attn.output")


def forward_encoder(params, embedded, attention_mask=None, training=False, rng=None, attention_record=None):
    """Run the encoder over ``embedded`` (``[seq, emb]`` or ``[batch, seq, emb]``).

    The embedding layer norm is applied first, so :func:`embed_input` stays
    affine in its distribution argument.  Positions with ``attention_mask == 0``
    are never attended to.  Dropout is applied only when ``training`` is true,
    drawing from ``rng``.  When ``attention_record`` is a list, each layer's
    attention probabilities are appended to it.
    """
    cfg = params.config
    x = embedded
    single = x.ndim == 2
    if single:
        x = x.reshape(1, *x.shape)
    b, n, _ = x.shape
    if attention_mask is None:
        attention_mask = np.ones((b, n), dtype=np.int64)
    attention_mask = np.asarray(attention_mask)
    if attention_mask.ndim == 1:
        attention_mask = attention_mask[None, :]
    if attention_mask.shape != (b, n):
        raise ShapeError(f"attention mask shape {attention_mask.shape} does not match sequence shape {(b, n)}")
    if training and cfg.dropout_rate > 0 and rng is None:
        raise ContractError("training mode with dropout needs an rng")
    keep = (attention_mask != 0)[:, None, None, :]

    x = T.layer_norm(x, params["embeddings.ln.gain"], params["embeddings.ln.bias"])
    if training:
        x = T.dropout(x, cfg.dropout_rate, rng)
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        a = _attention(x, keep, params, p, cfg, training, rng, attention_record)
        if training:
            a = T.dropout(a, cfg.dropout_rate, rng)
        x = T.layer_norm(x + a, params[p + "attn.ln.gain"], params[p + "attn.ln.bias"])
        f = _linear(T.gelu(_linear(x, params, p + "ffn.in")), params, p + "ffn.out")
        if training:
            f = T.dropout(f, cfg.dropout_rate, rng)
        x = T.layer_norm(x + f, params[p + "ffn.ln.gain"], params[p + "ffn.ln.bias"])
    return x.reshape(n, -1) if single else x


def mlm_logits(hidden, params):
    """``hidden @ W^T`` plus the optional output bias; softmax is left to the caller."""
    W = params.W
    if hidden.shape[-1] != W.shape[1]:
        raise ShapeError(f"hidden width {hidden.shape[-1]} != embedding width {W.shape[1]}")
    logits = hidden @ W.transpose()
    if params.config.mlm_bias:
        logits = logits + params["mlm.bias"]
    return logits


def classify(hidden, params):
    """Class logits from the hidden state at position 0 ([CLS])."""
    single = hidden.ndim == 2
    cls = hidden[0].reshape(1, -1) if single else hidden[:, 0]
    logits = cls @ params["classifier.weight"] + params["classifier.bias"]
    return logits.reshape(-1) if single else logits

