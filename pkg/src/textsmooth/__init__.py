"""Knowledge distillation through text smoothing, at desk scale.

A small numpy transformer is pretrained as a masked language model, its MLM
distributions are mixed into the one-hot inputs of a labelled dataset, and a
shallower student is trained on the mixture.  Plain fine-tuning and soft-label
KD are included as comparison baselines.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .distill import (
    ComparisonConfig,
    MetricsReport,
    TrainConfig,
    evaluate,
    finetune_baseline,
    pretrain_mlm,
    run_comparison,
    soft_label_kd,
    train_student,
)
from .errors import (
    ConfigError,
    ContractError,
    FormatError,
    IngestionError,
    LabelError,
    NumericError,
    ShapeError,
    SmoothingError,
    TextSmoothError,
)
from .sampler import sample_sentences, sentence_probability, top_sentences
from .smoothing import SmoothingConfig, load_smoothed, mlm_distribution, save_smoothed, smooth_dataset, smooth_text
from .synthetic import SyntheticConfig, make_synthetic_task
from .text import Dataset, Vocabulary, build_vocab, encode_instance, load_dataset, tokenize
from .transformer import ModelConfig, TransformerParams, init_params, init_student_from_teacher

__version__ = "0.1.0"
