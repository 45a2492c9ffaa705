# # Smoothing a sentence with a masked language model
#
# A one-hot encoded sentence says nothing about which other words could have
# appeared in each slot. A masked language model does: fed the raw sentence,
# its prediction at every position is a distribution over the vocabulary.
# Mixing the two gives a smoothed input,
#
#     smoothed[i] = lam * onehot(token_i) + (1 - lam) * mlm(sentence)[i]
#
# which a student model can consume through an expected embedding
# `smoothed @ W` instead of a table lookup.
#
# Run with `python demos/smoothing_a_sentence.py` (about half a minute).

import numpy as np

from textsmooth import (
    ModelConfig,
    SmoothingConfig,
    SyntheticConfig,
    TrainConfig,
    make_synthetic_task,
    mlm_distribution,
    pretrain_mlm,
    smooth_text,
)
from textsmooth import transformer as tf

# ## A toy corpus and a small teacher
#
# The synthetic task has sentiment words drawn from synonym pools, so a
# teacher trained on the unlabelled corpus learns that words from one pool
# are interchangeable.

corpus, train, test = make_synthetic_task(SyntheticConfig(n_corpus=800, pool_size=8))
vocab = train.vocab
config = ModelConfig(n_layers=2, emb_size=32, n_heads=4, ffn_size=64,
                     vocab_size=vocab.size, max_seq_len=16)
teacher, report = pretrain_mlm(config, corpus, TrainConfig(epochs=15, batch_size=32, learning_rate=2e-3), vocab)
print(f"vocabulary {vocab.size} words, MLM loss {report.epoch_losses[0]:.2f} -> {report.epoch_losses[-1]:.2f}")

# ## Where does the teacher put its mass?
#
# The teacher sees the sentence unmasked, in one forward pass. Its rows are
# proper distributions; the most likely alternatives at a sentiment slot are
# usually pool mates of the observed word. This briefly trained teacher
# still mixes polarities at some slots; longer pretraining separates them.

x = test[0]
dist = mlm_distribution(teacher, x)
print("\nsentence:", " ".join(vocab.decode(x.token_ids[: x.length])))
for pos in range(1, x.length - 1):
    top = np.argsort(-dist[pos])[:4]
    alts = ", ".join(f"{vocab.decode([i])[0]} {dist[pos, i]:.2f}" for i in top)
    print(f"  {vocab.decode([x.token_ids[pos]])[0]:>12}: {alts}")

# ## The mixing weight
#
# At lam = 1 the smoothed input is the one-hot sentence; at lam = 0 it is the
# teacher's guess alone. Padding is never smoothed.

for lam in (1.0, 0.5, 0.0):
    s = smooth_text(x, dist, SmoothingConfig(lam=lam))
    observed = s.distributions[np.arange(x.length), x.token_ids[: x.length]]
    print(f"lam {lam:.1f}: mean mass on the observed word {observed.mean():.3f}, "
          f"rows sum to 1: {np.allclose(s.distributions.sum(axis=1), 1.0)}")

# ## Expected embeddings agree with lookups on one-hot rows
#
# This is why training at lam = 1 reproduces ordinary fine-tuning exactly.

onehot = smooth_text(x, dist, SmoothingConfig(lam=1.0)).distributions
a = tf.embed_input(x.token_ids, teacher).data
b = tf.embed_input(onehot, teacher).data
print("\nlookup == expected embedding at lam = 1:", np.array_equal(a, b))
