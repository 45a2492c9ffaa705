"""Template-grammar sentiment task with synonym pools.

Sentences are built from slot templates.  Neutral slots draw from small
synonym groups ("has" / "contains" / "features"), and the sentiment slots of
a sentence all draw from the pool of its class.  Labelled training sentences
only see part of each sentiment pool while the unlabelled corpus and the test
set use all of it, so knowing which words are interchangeable (something a
masked language model picks up from the corpus) pays off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .text import Dataset, build_vocab, encode_instance

LABELS = ["negative", "positive"]

_POSITIVE = (
    "great good excellent superb wonderful brilliant fantastic terrific splendid "
    "marvelous lovely delightful charming stunning amazing impressive remarkable "
    "outstanding fine pleasant gorgeous beautiful magnificent exquisite superior "
    "sublime stellar admirable enjoyable masterful moving touching engaging witty "
    "clever inventive fresh vivid elegant polished"
).split()
_NEGATIVE = (
    "bad poor awful terrible dreadful horrible boring dull weak lousy tedious "
    "clumsy bland shoddy mediocre lame dismal painful awkward sloppy messy stale "
    "tired flat lifeless hollow tepid plodding dreary forgettable sluggish "
    "pointless shallow cheap cheesy murky muddled irritating grating"
).split()
_NEUTRAL_GROUPS = [
    "film movie picture feature production flick".split(),
    "story plot narrative script tale storyline".split(),
    "has contains features offers includes boasts".split(),
    "some several many a_few numerous various".split(),
    "effects visuals images scenes shots graphics".split(),
    "acting performances cast actors players ensemble".split(),
    "music score soundtrack songs melodies tunes".split(),
    "ending finale conclusion climax resolution denouement".split(),
    "director filmmaker auteur helmer creator storyteller".split(),
    "really truly quite very genuinely rather".split(),
    "overall altogether ultimately finally generally mostly".split(),
    "is was seems feels looks appears".split(),
    "camera cinematography photography lighting framing shooting".split(),
    "dialogue lines writing jokes banter exchanges".split(),
    "pacing rhythm tempo editing flow timing".split(),
    "sequel remake comedy drama thriller musical".split(),
    "audience viewers crowd critics public spectators".split(),
    "moments sequences episodes passages stretches segments".split(),
    "hero villain heroine protagonist lead sidekick".split(),
    "costumes sets designs props makeup scenery".split(),
    "makes leaves renders keeps gets turns".split(),
    "experience ride journey trip outing adventure".split(),
    "tone mood atmosphere spirit feel vibe".split(),
    "with alongside plus featuring including beside".split(),
]

# {N<k>} draws from neutral group k, {S} from the class pool.  Every template
# has at least two {S} slots so the pool of one slot is predictable from the others.
_TEMPLATES = [
    "the {N0} {N2} {N3} {S} {N4} and {S} {N5}",
    "the {N5} {N11} {N9} {S} and the {N1} {N11} {S}",
    "a {S} {N0} with {S} {N7} and {S} {N6}",
    "{N10} the {N8} {N2} a {S} {N1} and {S} {N13}",
    "the {N12} {N11} {S} , the {N14} {N11} {N9} {S}",
    "this {N15} {N2} {N3} {S} {N4} and a {S} {N7}",
    "{N9} {S} {N5} in a {S} {N0}",
    "the {N6} and the {N13} {N11} {S} and {S}",
    "the {N18} {N20} the {N16} {S} and the {N22} {S}",
    "{N3} {S} {N17} {N23} {S} {N19}",
    "the {N21} {N11} {S} , {N9} {S} for the {N16}",
]


@dataclass(frozen=True)
class SyntheticConfig:
    seed: int = 0
    vocab_size: int = 200
    n_train: int = 200
    n_test: int = 400
    n_corpus: int = 2000
    train_pool_fraction: float = 0.7
    max_seq_len: int = 16
    pool_size: int = 16


def _template_words():
    return {w for t in _TEMPLATES for w in t.split() if not w.startswith("{")}


def _pools(vocab_size, pool_size=0):
    """Sentiment pools; ``pool_size = 0`` sizes them so the vocabulary is about ``vocab_size``."""
    if pool_size:
        return _POSITIVE[:pool_size], _NEGATIVE[:pool_size]
    neutral_words = sum(len(g) for g in _NEUTRAL_GROUPS)
    budget = max(4, vocab_size - 5 - neutral_words - len(_template_words()))
    per_pool = max(2, min(len(_POSITIVE), len(_NEGATIVE), budget // 2))
    return _POSITIVE[:per_pool], _NEGATIVE[:per_pool]


def _sentence(rng, pool):
    template = _TEMPLATES[rng.integers(len(_TEMPLATES))]
    words = []
    for part in template.split():
        if part == "{S}":
            words.append(pool[rng.integers(len(pool))])
        elif part.startswith("{N"):
            group = _NEUTRAL_GROUPS[int(part[2:-1])]
            words.append(group[rng.integers(len(group))])
        else:
            words.append(part)
    return " ".join(words)


def _sample_split(rng, n, pools, balanced=True):
    texts, labels = [], []
    for i in range(n):
        label = i % 2 if balanced else int(rng.integers(2))
        texts.append(_sentence(rng, pools[label]))
        labels.append(label)
    order = rng.permutation(n)
    return [texts[i] for i in order], [labels[i] for i in order]


def make_synthetic_task(config=None, **overrides):
    """Return ``(corpus, train, test)`` for the synonym-pool task.

    Deterministic under ``config.seed``.  Both datasets carry the vocabulary
    built from the corpus (``train.vocab``).
    """
    if config is None:
        config = SyntheticConfig(**overrides)
    elif overrides:
        raise TypeError("pass either a SyntheticConfig or keyword overrides")
    if min(config.vocab_size, config.n_train, config.n_test, config.n_corpus) <= 0:
        raise ValueError("synthetic task sizes must be positive")

    rng = np.random.default_rng(config.seed)
    neg, pos = _pools(config.vocab_size, config.pool_size)[::-1]
    full = (neg, pos)
    n_seen = max(1, int(round(len(pos) * config.train_pool_fraction)))
    seen = tuple(list(rng.permutation(p))[:n_seen] for p in full)

    corpus, _ = _sample_split(rng, config.n_corpus, full, balanced=False)
    # Every word, including the ones a small corpus might miss, enters the vocabulary.
    vocab = build_vocab(corpus + [" ".join(pos + neg + [w for g in _NEUTRAL_GROUPS for w in g])])

    def encode(texts, labels):
        instances = [encode_instance(t, None, y, vocab, config.max_seq_len) for t, y in zip(texts, labels)]
        return Dataset(instances, list(LABELS), config.max_seq_len, vocab)

    train = encode(*_sample_split(rng, config.n_train, seen))
    test = encode(*_sample_split(rng, config.n_test, full))
    return corpus, train, test
