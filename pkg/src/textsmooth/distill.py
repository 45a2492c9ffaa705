"""Teacher MLM pretraining, student training and the comparison baselines.

Methods
-------
``textsmooth``     student trained on smoothed inputs (distribution form)
``bert_small``     student fine-tuned directly on the raw ids
``soft_label_kd``  student fitting a task-tuned teacher's soft labels

All training is deterministic given ``TrainConfig.seed``: batches follow a
permutation drawn from ``(seed, epoch)`` and dropout masks come from a
generator seeded once per run, so two methods that see identical inputs
produce identical losses.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from . import transformer as tf
from .errors import ConfigError, ContractError, IngestionError, NumericError, ShapeError, TextSmoothError
from .optim import AdamState, adam_step
from .smoothing import SmoothingConfig, smooth_dataset
from .text import CLS_ID, MASK_ID, PAD_ID, SEP_ID, Dataset, encode_instance
from .transformer import init_params, init_student_from_teacher

log = logging.getLogger(__name__)

METHODS = ("textsmooth", "bert_small", "soft_label_kd")
_DROPOUT_STREAM = 7919
_MASKING_STREAM = 104729


class ComparisonFailed(TextSmoothError):
    """At least one (method, seed) run of a comparison raised."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 16
    learning_rate: float = 1e-3
    seed: int = 0
    mlm_mask_prob: float = 0.15
    kd_temperature: float = 2.0
    kd_alpha: float = 0.5

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 <= self.mlm_mask_prob <= 1.0:
            raise ConfigError("mlm_mask_prob must lie in [0, 1]")
        if self.kd_temperature <= 0:
            raise ConfigError("kd_temperature must be positive")
        if not 0.0 <= self.kd_alpha <= 1.0:
            raise ConfigError("kd_alpha must lie in [0, 1]")


@dataclass
class MetricsReport:
    method: str
    seed: int
    step_losses: list = field(default_factory=list)
    step_epochs: list = field(default_factory=list)
    epoch_losses: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    test_accuracy: float | None = None
    forward_count: int = 0

    def to_records(self):
        """Line records: one per step, one per epoch and a final one.

        ``seconds`` is wall-clock time and is the only non-deterministic field.
        """
        base = {"method": self.method, "seed": self.seed}
        for i, (loss, epoch) in enumerate(zip(self.step_losses, self.step_epochs)):
            yield {**base, "kind": "step", "step": i, "epoch": epoch, "loss": loss,
                   "accuracy": None, "seconds": None, "forward_count": self.forward_count}
        for epoch, (loss, secs) in enumerate(zip(self.epoch_losses, self.epoch_seconds)):
            yield {**base, "kind": "epoch", "step": None, "epoch": epoch, "loss": loss,
                   "accuracy": None, "seconds": secs, "forward_count": self.forward_count}
        yield {**base, "kind": "final", "step": None, "epoch": len(self.epoch_losses),
               "loss": self.epoch_losses[-1] if self.epoch_losses else None,
               "accuracy": self.test_accuracy, "seconds": float(sum(self.epoch_seconds)),
               "forward_count": self.forward_count}

    @classmethod
    def from_records(cls, records):
        records = list(records)
        if not records:
            raise ValueError("no records")
        report = cls(records[0]["method"], records[0]["seed"])
        for r in records:
            if r["kind"] == "step":
                report.step_losses.append(r["loss"])
                report.step_epochs.append(r["epoch"])
            elif r["kind"] == "epoch":
                report.epoch_losses.append(r["loss"])
                report.epoch_seconds.append(r["seconds"])
            elif r["kind"] == "final":
                report.test_accuracy = r["accuracy"]
            report.forward_count = r["forward_count"]
        return report


def write_metrics(path, reports):
    with open(path, "w", encoding="utf-8") as fh:
        for report in reports:
            for record in report.to_records():
                fh.write(json.dumps(record) + "\n")


def read_metrics(path):
    """Parse a metrics file back into one report per ``(method, seed)``."""
    grouped = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                r = json.loads(line)
                grouped.setdefault((r["method"], r["seed"]), []).append(r)
    return [MetricsReport.from_records(rs) for rs in grouped.values()]


# ---------------------------------------------------------------------------
# shared training loop
# ---------------------------------------------------------------------------


def epoch_batches(n, batch_size, seed, epoch):
    """Index batches for one epoch; the last partial batch is kept."""
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


def _fit(params, n, batch_loss, cfg, method):
    """Adam over ``cfg.epochs``; ``batch_loss(index, rng)`` may return None to skip a step."""
    state = AdamState(lr=cfg.learning_rate)
    dropout_rng = np.random.default_rng([cfg.seed, _DROPOUT_STREAM])
    report = MetricsReport(method, cfg.seed)
    trainable = list(params)
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        losses = []
        for index in epoch_batches(n, cfg.batch_size, cfg.seed, epoch):
            loss = batch_loss(index, dropout_rng)
            if loss is None:
                continue
            T.backward(loss)
            adam_step(trainable, [p.grad for p in trainable], state)
            params.zero_grad()
            losses.append(loss.item())
            report.step_losses.append(losses[-1])
            report.step_epochs.append(epoch)
        report.epoch_losses.append(float(np.mean(losses)) if losses else 0.0)
        report.epoch_seconds.append(time.perf_counter() - start)
        log.info("%s seed=%d epoch=%d loss=%.6f", method, cfg.seed, epoch, report.epoch_losses[-1])
    if not params.all_finite():
        raise NumericError(f"{method}: parameters became non-finite")
    return report


def _onehot(labels, n):
    out = np.zeros((len(labels), n))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def _classifier_logits(params, token_input, positions, segments, mask, training, rng):
    embedded = tf.embed_input(token_input, params, positions, segments)
    hidden = tf.forward_encoder(params, embedded, mask, training=training, rng=rng)
    return tf.classify(hidden, params)


# ---------------------------------------------------------------------------
# teacher pretraining
# ---------------------------------------------------------------------------


def mask_tokens(ids, mask_prob, rng, vocab_size):
    """BERT corruption: returns ``(corrupted_ids, selected)``.

    Of the selected non-special positions 80% become [MASK], 10% a random
    ordinary token and 10% stay unchanged.
    """
    candidates = (ids != PAD_ID) & (ids != CLS_ID) & (ids != SEP_ID)
    selected = candidates & (rng.random(ids.shape) < mask_prob)
    roll = rng.random(ids.shape)
    random_ids = rng.integers(MASK_ID + 1, vocab_size, size=ids.shape)
    corrupted = ids.copy()
    corrupted[selected & (roll < 0.8)] = MASK_ID
    swap = selected & (roll >= 0.8) & (roll < 0.9)
    corrupted[swap] = random_ids[swap]
    return corrupted, selected


def encode_corpus(corpus, vocab, max_seq_len):
    instances = [encode_instance(text, None, 0, vocab, max_seq_len) for text in corpus]
    if not instances:
        raise IngestionError("cannot pretrain on an empty corpus")
    return Dataset(instances, ["_"], max_seq_len, vocab)


def pretrain_mlm(config, corpus, train_cfg, vocab):
    """Train a teacher from scratch with the masked-LM objective.

    ``corpus`` is a list of raw texts.  Returns ``(params, report)``.  Batches
    with no selected position are skipped without touching the parameters.
    """
    if vocab.size != config.vocab_size:
        raise ConfigError(f"vocabulary has {vocab.size} tokens but config.vocab_size={config.vocab_size}")
    data = encode_corpus(list(corpus), vocab, config.max_seq_len)
    ids, segments, masks, _ = data.arrays()
    params = init_params(config, train_cfg.seed)
    mask_rng = np.random.default_rng([train_cfg.seed, _MASKING_STREAM])

    def batch_loss(index, rng):
        corrupted, selected = mask_tokens(ids[index], train_cfg.mlm_mask_prob, mask_rng, config.vocab_size)
        if not selected.any():
            return None
        where = np.nonzero(selected)
        embedded = tf.embed_input(corrupted, params, segment_ids=segments[index])
        hidden = tf.forward_encoder(params, embedded, masks[index], training=True, rng=rng)
        logits = tf.mlm_logits(hidden[where], params)
        return T.cross_entropy(logits, _onehot(ids[index][where], config.vocab_size))

    report = _fit(params, data.N, batch_loss, train_cfg, "pretrain_mlm")
    return params, report


def mlm_recovery_accuracy(params, corpus, vocab, mask_prob=0.15, seed=0):
    """Top-1 accuracy at positions replaced by [MASK] in held-out texts."""
    data = encode_corpus(list(corpus), vocab, params.config.max_seq_len)
    ids, segments, masks, _ = data.arrays()
    rng = np.random.default_rng(seed)
    candidates = (ids != PAD_ID) & (ids != CLS_ID) & (ids != SEP_ID)
    selected = candidates & (rng.random(ids.shape) < mask_prob)
    corrupted = np.where(selected, MASK_ID, ids)
    hidden = tf.forward_encoder(params, tf.embed_input(corrupted, params, segment_ids=segments), masks)
    predicted = tf.mlm_logits(hidden, params).data.argmax(axis=-1)
    return float((predicted[selected] == ids[selected]).mean())


def unigram_recovery_accuracy(train_corpus, test_corpus, vocab, max_seq_len, mask_prob=0.15, seed=0):
    """Same protocol as :func:`mlm_recovery_accuracy` but always guessing the most frequent token."""
    train_ids = encode_corpus(list(train_corpus), vocab, max_seq_len).arrays()[0]
    ordinary = train_ids[train_ids > MASK_ID]
    guess = np.bincount(ordinary, minlength=vocab.size).argmax()
    ids = encode_corpus(list(test_corpus), vocab, max_seq_len).arrays()[0]
    rng = np.random.default_rng(seed)
    candidates = (ids != PAD_ID) & (ids != CLS_ID) & (ids != SEP_ID)
    selected = candidates & (rng.random(ids.shape) < mask_prob)
    return float((ids[selected] == guess).mean())


# ---------------------------------------------------------------------------
# students
# ---------------------------------------------------------------------------


def _mark_tuned(params):
    params.head_trained = True
    return params


def _check_compatible(params, vocab_size, seq_len):
    cfg = params.config
    if vocab_size != cfg.vocab_size:
        raise ShapeError(f"data vocabulary width {vocab_size} != model vocab_size {cfg.vocab_size}")
    if seq_len > cfg.max_seq_len:
        raise ShapeError(f"data sequence length {seq_len} exceeds model max_seq_len {cfg.max_seq_len}")


def train_student(student_params, smoothed, train_cfg, method="textsmooth"):
    """Supervised training on smoothed inputs; returns ``(params, report)``."""
    if not smoothed:
        raise ContractError("no smoothed instances to train on")
    dists = np.stack([x.distributions for x in smoothed])
    positions = np.stack([x.position_ids for x in smoothed])
    segments = np.stack([x.segment_ids for x in smoothed])
    masks = np.stack([x.attention_mask for x in smoothed])
    labels = np.array([x.label for x in smoothed])
    _check_compatible(student_params, dists.shape[-1], dists.shape[1])
    params = student_params.copy()
    n_labels = params.config.n_labels

    def batch_loss(index, rng):
        logits = _classifier_logits(params, dists[index], positions[index], segments[index], masks[index], True, rng)
        return T.cross_entropy(logits, _onehot(labels[index], n_labels))

    report = _fit(params, len(smoothed), batch_loss, train_cfg, method)
    return _mark_tuned(params), report


def _raw_arrays(dataset):
    ids, segments, masks, labels = dataset.arrays()
    positions = np.stack([x.position_ids for x in dataset])
    return ids, positions, segments, masks, labels


def finetune_baseline(student_params, dataset, train_cfg, method="bert_small"):
    """Plain fine-tuning on raw ids; returns ``(params, report)``."""
    ids, positions, segments, masks, labels = _raw_arrays(dataset)
    _check_compatible(student_params, student_params.config.vocab_size, ids.shape[1])
    if ids.max() >= student_params.config.vocab_size:
        raise ShapeError("dataset ids exceed the model vocabulary")
    params = student_params.copy()
    n_labels = params.config.n_labels

    def batch_loss(index, rng):
        logits = _classifier_logits(params, ids[index], positions[index], segments[index], masks[index], True, rng)
        return T.cross_entropy(logits, _onehot(labels[index], n_labels))

    report = _fit(params, dataset.N, batch_loss, train_cfg, method)
    return _mark_tuned(params), report


def predict_logits(params, dataset, batch_size=256):
    """Inference logits from id-form inputs, dropout off."""
    ids, positions, segments, masks, _ = _raw_arrays(dataset)
    out = []
    for start in range(0, len(ids), batch_size):
        sl = slice(start, start + batch_size)
        out.append(_classifier_logits(params, ids[sl], positions[sl], segments[sl], masks[sl], False, None).data)
    return np.concatenate(out) if out else np.zeros((0, params.config.n_labels))


def soft_labels(teacher_clf_params, dataset, temperature):
    logits = predict_logits(teacher_clf_params, dataset) / temperature
    return T.softmax(logits, axis=-1).data


def soft_label_kd(teacher_clf_params, student_params, dataset, train_cfg):
    """Student fits ``alpha * CE(z / T, teacher soft labels at T) + (1 - alpha) * CE(z, labels)``."""
    if not getattr(teacher_clf_params, "head_trained", False):
        raise ContractError("soft-label KD needs a teacher whose classifier head was fine-tuned on the task")
    ids, positions, segments, masks, labels = _raw_arrays(dataset)
    targets = soft_labels(teacher_clf_params, dataset, train_cfg.kd_temperature)
    params = student_params.copy()
    n_labels = params.config.n_labels
    alpha, temp = train_cfg.kd_alpha, train_cfg.kd_temperature

    def batch_loss(index, rng):
        logits = _classifier_logits(params, ids[index], positions[index], segments[index], masks[index], True, rng)
        kd = T.cross_entropy(logits * (1.0 / temp), targets[index])
        hard = T.cross_entropy(logits, _onehot(labels[index], n_labels))
        return kd * alpha + hard * (1.0 - alpha)

    report = _fit(params, dataset.N, batch_loss, train_cfg, "soft_label_kd")
    return _mark_tuned(params), report


@dataclass
class EvalResult:
    accuracy: float
    correct_per_class: list
    total_per_class: list


def evaluate(params, dataset):
    """Accuracy of argmax predictions on one-hot (id) inputs."""
    logits = predict_logits(params, dataset)
    labels = np.array([x.label for x in dataset], dtype=np.int64)
    predicted = logits.argmax(axis=-1)
    n_labels = params.config.n_labels
    correct = [int(((predicted == labels) & (labels == k)).sum()) for k in range(n_labels)]
    total = [int((labels == k).sum()) for k in range(n_labels)]
    accuracy = float((predicted == labels).mean()) if len(labels) else 0.0
    return EvalResult(accuracy, correct, total)


# ---------------------------------------------------------------------------
# comparison
# ---------------------------------------------------------------------------


@dataclass
class ComparisonConfig:
    teacher: tf.ModelConfig
    student: tf.ModelConfig
    pretrain: TrainConfig
    train: TrainConfig
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    seeds: tuple = (0, 1, 2, 3, 4)
    methods: tuple = METHODS


@dataclass
class ComparisonReport:
    reports: list
    failures: list
    forward_count: int
    n_train: int
    teacher_checksum_before: str
    teacher_checksum_after: str

    def accuracies(self, method):
        return [r.test_accuracy for r in self.reports if r.method == method]

    def summary(self):
        out = {}
        for method in dict.fromkeys(r.method for r in self.reports):
            acc = np.array(self.accuracies(method))
            secs = [s for r in self.reports if r.method == method for s in r.epoch_seconds]
            out[method] = {
                "mean": float(acc.mean()),
                "std": float(acc.std(ddof=1)) if len(acc) > 1 else 0.0,
                "n": len(acc),
                "seconds_per_epoch": float(np.mean(secs)) if secs else 0.0,
            }
        return out

    def rows(self):
        return [{"method": r.method, "seed": r.seed, "accuracy": r.test_accuracy} for r in self.reports]

    def format_table(self):
        summary = self.summary()
        lines = [f"{'method':<16}{'mean':>9}{'std':>9}{'n':>4}{'s/epoch':>10}"]
        for method, s in summary.items():
            lines.append(f"{method:<16}{s['mean']:>9.4f}{s['std']:>9.4f}{s['n']:>4d}{s['seconds_per_epoch']:>10.3f}")
        lines.append(f"teacher forwards during smoothing: {self.forward_count} (N_train = {self.n_train})")
        for method, seed, err in self.failures:
            lines.append(f"FAILED {method} seed={seed}: {err}")
        return "\n".join(lines)


def run_comparison(config, teacher, train, test, teacher_clf=None):
    """Train every method for every seed from one frozen teacher.

    ``teacher`` is the pretrained (not task-tuned) model.  A failing
    ``(method, seed)`` run is recorded in ``failures`` and the rest continue.
    """
    before = teacher.checksum()
    smoothed, forwards = smooth_dataset(teacher, train, config.smoothing)
    if "soft_label_kd" in config.methods and teacher_clf is None:
        teacher_clf, _ = finetune_baseline(teacher, train, config.train, method="teacher_finetune")

    reports, failures = [], []
    for method in config.methods:
        for seed in config.seeds:
            cfg = TrainConfig(**{**asdict(config.train), "seed": seed})
            try:
                student = init_student_from_teacher(teacher, config.student, seed=seed)
                if method == "textsmooth":
                    trained, report = train_student(student, smoothed, cfg)
                    report.forward_count = forwards
                elif method == "bert_small":
                    trained, report = finetune_baseline(student, train, cfg)
                elif method == "soft_label_kd":
                    trained, report = soft_label_kd(teacher_clf, student, train, cfg)
                else:
                    raise ConfigError(f"unknown method {method!r}")
                report.test_accuracy = evaluate(trained, test).accuracy
                reports.append(report)
                log.info("%s seed=%d accuracy=%.4f", method, seed, report.test_accuracy)
            except Exception as exc:  # noqa: BLE001 - recorded and reported, run continues
                log.exception("%s seed=%d failed", method, seed)
                failures.append((method, seed, f"{type(exc).__name__}: {exc}"))
    return ComparisonReport(reports, failures, forwards, train.N, before, teacher.checksum())
