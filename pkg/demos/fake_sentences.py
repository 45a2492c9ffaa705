# # Sampling fake sentences from smoothed distributions
#
# Each row of a smoothed sentence is a distribution over words, so sampling
# one word per position independently produces "fake" sentences. Their
# probability is the product of the per-position probabilities. Ranking the
# unique samples shows what the student effectively trains on: mostly the
# raw sentence, then close paraphrases.
#
# Run with `python demos/fake_sentences.py` (about half a minute).

from textsmooth import (
    ModelConfig,
    SmoothingConfig,
    SyntheticConfig,
    TrainConfig,
    make_synthetic_task,
    mlm_distribution,
    pretrain_mlm,
    smooth_text,
    top_sentences,
)
from textsmooth.sampler import format_report

corpus, train, test = make_synthetic_task(SyntheticConfig(n_corpus=800, pool_size=8))
vocab = train.vocab
config = ModelConfig(n_layers=2, emb_size=32, n_heads=4, ffn_size=64,
                     vocab_size=vocab.size, max_seq_len=16)
teacher, _ = pretrain_mlm(config, corpus, TrainConfig(epochs=15, batch_size=32, learning_rate=2e-3), vocab)

# ## Five unique samples per sentence
#
# 200 draws are deduplicated and sorted by probability. The first line of
# each block is the raw sentence.

smoothing = SmoothingConfig(lam=0.5)
raw_first = 0
for i, x in enumerate(test[:40]):
    s = smooth_text(x, mlm_distribution(teacher, x), smoothing)
    top = top_sentences(s, n_samples=200, n_report=5, seed=i, vocab=vocab)
    raw_first += top[0].token_ids == tuple(x.token_ids)
    if i < 3:
        print(format_report(" ".join(vocab.decode(x.token_ids[1 : x.length - 1])), top))

print(f"raw sentence ranked first for {raw_first}/40 test sentences")
