"""Draw fake sentences from a smoothed instance and rank them by probability.

Positions holding [PAD], [CLS] or [SEP] always emit their own token and are
left out of sentence probabilities, so an unsmoothed (lambda = 1) instance
gives its raw sentence probability exactly 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .text import CLS_ID, PAD_ID, SEP_ID


@dataclass(frozen=True)
class SampledSentence:
    token_ids: tuple
    text: str
    log_probability: float
    rank: int = 0

    @property
    def probability(self):
        return math.exp(self.log_probability)


def free_positions(smoothed):
    ids = np.asarray(smoothed.token_ids)
    return np.nonzero((ids != PAD_ID) & (ids != CLS_ID) & (ids != SEP_ID))[0]


def render(token_ids, vocab=None):
    ids = [i for i in token_ids if i not in (PAD_ID, CLS_ID, SEP_ID)]
    if vocab is None:
        return " ".join(str(i) for i in ids)
    return " ".join(vocab.decode(ids))


def sentence_log_probability(smoothed, token_ids):
    token_ids = np.asarray(token_ids)
    if token_ids.shape != (smoothed.seq_len,):
        raise ShapeError(f"sentence has length {token_ids.shape} but the instance has {smoothed.seq_len} positions")
    if token_ids.min(initial=0) < 0 or token_ids.max(initial=0) >= smoothed.distributions.shape[1]:
        raise ContractError("token id outside the vocabulary")
    pos = free_positions(smoothed)
    with np.errstate(divide="ignore"):
        return float(np.log(smoothed.distributions[pos, token_ids[pos]]).sum())


def sentence_probability(smoothed, token_ids):
    """Product over free positions of the smoothed probability of each token."""
    return math.exp(sentence_log_probability(smoothed, token_ids))


def sample_sentences(smoothed, k, seed, vocab=None):
    """``k`` independent draws, each position sampled from its smoothed row."""
    if k < 1:
        raise ContractError("k must be at least 1")
    rng = np.random.default_rng(seed)
    pos = free_positions(smoothed)
    rows = smoothed.distributions[pos]
    cdf = np.cumsum(rows, axis=1)
    cdf[:, -1] = np.inf
    u = rng.random((k, len(pos)))
    draws = np.empty((k, len(pos)), dtype=np.int64)
    for j in range(len(pos)):
        draws[:, j] = np.searchsorted(cdf[j], u[:, j], side="right")
    out = []
    for row in draws:
        ids = np.array(smoothed.token_ids, dtype=np.int64)
        ids[pos] = row
        out.append(SampledSentence(tuple(int(i) for i in ids), render(ids, vocab), sentence_log_probability(smoothed, ids)))
    return out


def argmax_sentence(smoothed):
    ids = np.array(smoothed.token_ids, dtype=np.int64)
    pos = free_positions(smoothed)
    ids[pos] = smoothed.distributions[pos].argmax(axis=1)
    return ids


def top_sentences(smoothed, n_samples, n_report, seed, vocab=None):
    """Unique samples sorted by probability (ties by token ids), best ``n_report`` first."""
    if n_report > n_samples:
        raise ContractError("n_report cannot exceed n_samples")
    unique = {s.token_ids: s for s in sample_sentences(smoothed, n_samples, seed, vocab)}
    ranked = sorted(unique.values(), key=lambda s: (-s.log_probability, s.token_ids))[:n_report]
    return [SampledSentence(s.token_ids, s.text, s.log_probability, rank) for rank, s in enumerate(ranked, start=1)]


def format_report(raw_text, sentences):
    """Raw text line, then ``rank<TAB>probability<TAB>sentence`` per sample.

    Probabilities cover the non-special positions only.
    """
    lines = [raw_text]
    lines += [f"{s.rank}\t{s.probability:.6g}\t{s.text}" for s in sentences]
    return "\n".join(lines) + "\n"
