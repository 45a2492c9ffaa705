"""Vocabulary, word-level tokenisation, instance encoding and TSV datasets."""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, IngestionError, LabelError

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(5)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def tokenize(text):
    """Lowercase, split on whitespace and split each punctuation mark off.

    >>> tokenize("don't stop.")
    ['don', "'", 't', 'stop', '.']
    """
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """Bijection between tokens and ids, with the five reserved tokens at 0-4."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[:5]) != SPECIAL_TOKENS:
            raise ContractError("vocabulary must start with the reserved tokens " + ", ".join(SPECIAL_TOKENS))
        self.id_to_token = tokens
        self.token_to_id = {t: i for i, t in enumerate(tokens)}
        if len(self.token_to_id) != len(tokens):
            raise ContractError("vocabulary contains duplicate tokens")

    def __len__(self):
        return len(self.id_to_token)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.id_to_token == other.id_to_token

    def __contains__(self, token):
        return token in self.token_to_id

    @property
    def size(self):
        return len(self.id_to_token)

    def encode(self, tokens):
        return [self.token_to_id.get(t, UNK_ID) for t in tokens]

    def decode(self, ids):
        return [self.id_to_token[i] for i in ids]

    def checksum(self):
        return hashlib.sha256("\n".join(self.id_to_token).encode("utf-8")).hexdigest()


def build_vocab(corpus, min_freq=1):
    """Vocabulary over ``corpus`` ordered by descending frequency, then token."""
    if min_freq < 1:
        raise ContractError("min_freq must be positive")
    counts = Counter()
    n_texts = 0
    for text in corpus:
        n_texts += 1
        counts.update(tokenize(text))
    if n_texts == 0:
        raise IngestionError("cannot build a vocabulary from an empty corpus")
    kept = sorted((t for t, c in counts.items() if c >= min_freq and t not in SPECIAL_TOKENS),
                  key=lambda t: (-counts[t], t))
    return Vocabulary(list(SPECIAL_TOKENS) + kept)


@dataclass
class EncodedInstance:
    token_ids: np.ndarray
    position_ids: np.ndarray
    segment_ids: np.ndarray
    attention_mask: np.ndarray
    label: int
    text_a: str = field(default="", compare=False)
    text_b: str | None = field(default=None, compare=False)

    def __eq__(self, other):
        return (
            isinstance(other, EncodedInstance)
            and self.label == other.label
            and np.array_equal(self.token_ids, other.token_ids)
            and np.array_equal(self.position_ids, other.position_ids)
            and np.array_equal(self.segment_ids, other.segment_ids)
            and np.array_equal(self.attention_mask, other.attention_mask)
        )

    @property
    def seq_len(self):
        return len(self.token_ids)

    @property
    def length(self):
        """Number of non-padding positions."""
        return int(self.attention_mask.sum())


def _truncate(a, b, budget):
    a, b = list(a), list(b)
    while len(a) + len(b) > budget:
        if len(a) >= len(b):
            a.pop()
        else:
            b.pop()
    return a, b


def encode_instance(text_a, text_b, label, vocab, max_seq_len, label_set=None):
    """Lay out ``[CLS] a [SEP] (b [SEP]) [PAD]...`` as id arrays.

    ``label`` is either a class id or a name looked up in ``label_set``.
    Over-long inputs lose tokens from the end of the longer segment first.
    """
    if max_seq_len < 3:
        raise ContractError("max_seq_len must be at least 3")
    if isinstance(label, str):
        if label_set is None or label not in label_set:
            raise LabelError(f"unknown label {label!r}")
        label = list(label_set).index(label)
    a = vocab.encode(tokenize(text_a))
    b = vocab.encode(tokenize(text_b)) if text_b is not None else []
    budget = max_seq_len - (3 if text_b is not None else 2)
    if budget < 0:
        raise ContractError("max_seq_len too small for a sentence pair")
    a, b = _truncate(a, b, budget)

    ids = [CLS_ID] + a + [SEP_ID]
    segments = [0] * len(ids)
    if text_b is not None:
        ids += b + [SEP_ID]
        segments += [1] * (len(b) + 1)
    n_real = len(ids)
    pad = max_seq_len - n_real
    return EncodedInstance(
        token_ids=np.array(ids + [PAD_ID] * pad, dtype=np.int64),
        position_ids=np.arange(max_seq_len, dtype=np.int64),
        segment_ids=np.array(segments + [0] * pad, dtype=np.int64),
        attention_mask=np.array([1] * n_real + [0] * pad, dtype=np.int64),
        label=int(label),
        text_a=text_a,
        text_b=text_b,
    )


def decode_instance(instance, vocab):
    """Tokens of the non-special positions, per segment."""
    tokens = vocab.decode(instance.token_ids[: instance.length])
    segs = instance.segment_ids[: instance.length]
    a = [t for t, s in zip(tokens, segs) if s == 0 and t not in (CLS, SEP)]
    b = [t for t, s in zip(tokens, segs) if s == 1 and t != SEP]
    return a, b


@dataclass
class Dataset:
    instances: list
    label_set: list
    max_seq_len: int
    vocab: Vocabulary | None = field(default=None, compare=False)

    @property
    def N(self):
        return len(self.instances)

    def __len__(self):
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def __getitem__(self, i):
        return self.instances[i]

    def arrays(self, index=None):
        """Stack instances (all, or ``index``) into batch arrays."""
        items = self.instances if index is None else [self.instances[i] for i in index]
        return (
            np.stack([x.token_ids for x in items]),
            np.stack([x.segment_ids for x in items]),
            np.stack([x.attention_mask for x in items]),
            np.array([x.label for x in items], dtype=np.int64),
        )

    def checksum(self):
        h = hashlib.sha256()
        h.update("\t".join(self.label_set).encode("utf-8"))
        for x in self.instances:
            for arr in (x.token_ids, x.segment_ids, x.attention_mask):
                h.update(arr.astype("<i8").tobytes())
            h.update(int(x.label).to_bytes(8, "little"))
        return h.hexdigest()


def read_rows(path):
    """Parse the TSV rows of ``path`` as ``(line_no, label, text_a, text_b)``."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IngestionError(f"cannot read dataset {path}: {exc}") from exc
    rows = []
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) not in (2, 3) or not cols[0].strip():
            raise IngestionError(f"{path}:{line_no}: expected 'label<TAB>text_a[<TAB>text_b]', got {len(cols)} column(s)")
        rows.append((line_no, cols[0].strip(), cols[1], cols[2] if len(cols) == 3 else None))
    return rows


def load_dataset(path, vocab, max_seq_len, label_set=None):
    """Read a TSV dataset in file order.

    Labels map to ids in first-occurrence order unless ``label_set`` is given,
    in which case rows with other labels are rejected.
    """
    rows = read_rows(path)
    fixed = label_set is not None
    labels = list(label_set) if fixed else []
    instances = []
    for line_no, label, a, b in rows:
        if label not in labels:
            if fixed:
                raise LabelError(f"{path}:{line_no}: unknown label {label!r}")
            labels.append(label)
        instances.append(encode_instance(a, b, labels.index(label), vocab, max_seq_len))
    return Dataset(instances, labels, max_seq_len, vocab)


def save_dataset(dataset, path):
    """Write ``dataset`` in the TSV format read by :func:`load_dataset`."""
    with open(path, "w", encoding="utf-8") as fh:
        for x in dataset.instances:
            cols = [dataset.label_set[x.label], x.text_a]
            if x.text_b is not None:
                cols.append(x.text_b)
            fh.write("\t".join(cols) + "\n")


def read_corpus(path):
    """Non-blank lines of a plain-text corpus file."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IngestionError(f"cannot read corpus {path}: {exc}") from exc
    corpus = [line.strip() for line in lines if line.strip()]
    if not corpus:
        raise IngestionError(f"corpus {path} is empty")
    return corpus
