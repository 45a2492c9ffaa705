# # Text smoothing against fine-tuning and soft-label KD
#
# Three ways to train a one-layer student initialised from a two-layer
# teacher's lower layers:
#
# * bert_small: fine-tune on the labelled one-hot data.
# * soft_label_kd: fit a task-tuned teacher's softened class probabilities.
# * textsmooth: fine-tune on smoothed inputs from the frozen MLM teacher.
#
# This uses the desk-scale settings with three seeds instead of five and
# takes a few minutes. `textsmooth compare configs/desk_scale.cfg` is the
# full run.

from pathlib import Path

from textsmooth import ComparisonConfig, ModelConfig, pretrain_mlm, run_comparison
from textsmooth.cli import prepare_data
from textsmooth.config import load_config

cfg = load_config(Path(__file__).parent.parent / "configs" / "desk_scale.cfg")
corpus, vocab, train, test = prepare_data(cfg)
teacher_cfg = cfg.model_config("teacher", vocab.size, cfg.max_seq_len)
teacher_cfg = ModelConfig(**{**teacher_cfg.to_dict(), "n_labels": len(train.label_set)})

# ## The teacher must know the synonym pools
#
# Smoothing only helps if the teacher's guesses are good. A briefly trained
# teacher spreads mass across both polarities, and the student then learns
# from noise. With 20 epochs on a smaller task TextSmooth scored 0.64
# against 0.92 for plain fine-tuning. The desk config pretrains for 60 epochs.

teacher, report = pretrain_mlm(teacher_cfg, corpus, cfg.pretrain, vocab)
print(f"teacher MLM loss {report.epoch_losses[-1]:.3f} after {len(report.epoch_losses)} epochs")

# ## One smoothing pass, many students
#
# Smoothing costs one teacher forward per training instance and happens once;
# every seed and method then trains from the same frozen teacher.

config = ComparisonConfig(
    teacher=teacher_cfg,
    student=ModelConfig(**{**teacher_cfg.to_dict(), **cfg.student}),
    pretrain=cfg.pretrain,
    train=cfg.train,
    smoothing=cfg.smoothing,
    seeds=(0, 1, 2),
)
result = run_comparison(config, teacher, train, test)
print(result.format_table())
print("teacher untouched:", result.teacher_checksum_before == result.teacher_checksum_after)
