import math

import numpy as np
import pytest

from textsmooth import distill
from textsmooth import transformer as tf
from textsmooth.distill import (
    ComparisonConfig,
    MetricsReport,
    TrainConfig,
    epoch_batches,
    evaluate,
    finetune_baseline,
    mask_tokens,
    pretrain_mlm,
    read_metrics,
    run_comparison,
    soft_label_kd,
    train_student,
    write_metrics,
)
from textsmooth.errors import ConfigError, ContractError, IngestionError
from textsmooth.smoothing import SmoothingConfig, smooth_dataset
from textsmooth.text import CLS_ID, MASK_ID, PAD_ID, SEP_ID, Dataset

FAST = TrainConfig(epochs=2, batch_size=8, learning_rate=1e-3, seed=3)


def _student(teacher, seed=0, n_layers=1):
    cfg = tf.ModelConfig(**{**teacher.config.to_dict(), "n_layers": n_layers})
    return tf.init_student_from_teacher(teacher, cfg, seed=seed)


@pytest.fixture(scope="module")
def tuned_teacher(small_teacher, small_task):
    params, _ = finetune_baseline(small_teacher, small_task[1], FAST, method="teacher_finetune")
    return params


class TestTrainConfig:
    @pytest.mark.parametrize("bad", [dict(epochs=0), dict(batch_size=0), dict(learning_rate=0.0),
                                     dict(kd_alpha=1.5), dict(kd_temperature=0.0), dict(mlm_mask_prob=2.0)])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)


class TestBatches:
    def test_permutation_keeps_partial_batch(self):
        batches = epoch_batches(10, 4, seed=1, epoch=0)
        assert [len(b) for b in batches] == [4, 4, 2]
        assert sorted(np.concatenate(batches)) == list(range(10))

    def test_depends_on_seed_and_epoch(self):
        a = np.concatenate(epoch_batches(20, 5, 1, 0))
        np.testing.assert_array_equal(a, np.concatenate(epoch_batches(20, 5, 1, 0)))
        assert not np.array_equal(a, np.concatenate(epoch_batches(20, 5, 1, 1)))
        assert not np.array_equal(a, np.concatenate(epoch_batches(20, 5, 2, 0)))


class TestMasking:
    def test_proportions(self):
        rng = np.random.default_rng(0)
        ids = np.full((400, 50), 7)
        ids[:, 0], ids[:, -1] = CLS_ID, SEP_ID
        corrupted, selected = mask_tokens(ids, 0.15, rng, vocab_size=30)
        assert not selected[:, 0].any() and not selected[:, -1].any()
        frac = selected[:, 1:-1].mean()
        assert abs(frac - 0.15) < 0.01
        chosen = corrupted[selected]
        assert abs((chosen == MASK_ID).mean() - 0.8) < 0.02
        assert abs((chosen == 7).mean() - (0.1 + 0.1 / 25)) < 0.02
        np.testing.assert_array_equal(corrupted[~selected], ids[~selected])

    def test_padding_never_selected(self):
        ids = np.array([[CLS_ID, 5, 6, SEP_ID, PAD_ID, PAD_ID]] * 200)
        _, selected = mask_tokens(ids, 1.0, np.random.default_rng(1), 10)
        assert selected[:, 1:3].all() and not selected[:, [0, 3, 4, 5]].any()


class TestPretraining:
    def test_loss_decreases_first_three_epochs(self, small_task):
        corpus, train, _ = small_task
        cfg = tf.ModelConfig(n_layers=1, emb_size=32, n_heads=4, ffn_size=64, vocab_size=train.vocab.size,
                             max_seq_len=16)
        _, report = pretrain_mlm(cfg, corpus, TrainConfig(epochs=3, batch_size=32, learning_rate=2e-3), train.vocab)
        a, b, c = report.epoch_losses
        assert a > b > c

    def test_deterministic(self, small_task):
        corpus, train, _ = small_task
        cfg = tf.ModelConfig(n_layers=1, emb_size=8, n_heads=2, ffn_size=16, vocab_size=train.vocab.size,
                             max_seq_len=16)
        run = lambda: pretrain_mlm(cfg, corpus[:64], TrainConfig(epochs=1, batch_size=16), train.vocab)
        (p1, r1), (p2, r2) = run(), run()
        assert p1.checksum() == p2.checksum()
        assert r1.step_losses == r2.step_losses

    def test_zero_mask_prob_skips_every_step(self, small_task):
        corpus, train, _ = small_task
        cfg = tf.ModelConfig(n_layers=1, emb_size=8, n_heads=2, ffn_size=16, vocab_size=train.vocab.size,
                             max_seq_len=16)
        params, report = pretrain_mlm(cfg, corpus[:32], TrainConfig(epochs=1, batch_size=16, mlm_mask_prob=0.0),
                                      train.vocab)
        assert report.step_losses == []
        assert params.checksum() == tf.init_params(cfg, 0).checksum()

    def test_empty_corpus(self, small_task):
        vocab = small_task[1].vocab
        cfg = tf.ModelConfig(n_layers=1, emb_size=8, n_heads=2, ffn_size=16, vocab_size=vocab.size)
        with pytest.raises(IngestionError):
            pretrain_mlm(cfg, [], TrainConfig(epochs=1), vocab)

    def test_vocab_size_mismatch(self, small_task):
        vocab = small_task[1].vocab
        cfg = tf.ModelConfig(n_layers=1, emb_size=8, n_heads=2, ffn_size=16, vocab_size=vocab.size + 1)
        with pytest.raises(ConfigError):
            pretrain_mlm(cfg, ["a"], TrainConfig(epochs=1), vocab)


class TestStudents:
    def test_lambda_one_matches_finetuning_bitwise(self, small_teacher, small_task):
        train = small_task[1]
        student = _student(small_teacher, seed=4)
        smoothed, _ = smooth_dataset(small_teacher, train, SmoothingConfig(lam=1.0))
        p1, r1 = train_student(student, smoothed, FAST)
        p2, r2 = finetune_baseline(student, train, FAST)
        assert r1.step_losses == r2.step_losses
        assert p1.checksum() == p2.checksum()

    def test_lambda_half_differs(self, small_teacher, small_task):
        train = small_task[1]
        student = _student(small_teacher, seed=4)
        smoothed, _ = smooth_dataset(small_teacher, train, SmoothingConfig(lam=0.5))
        _, r1 = train_student(student, smoothed, FAST)
        _, r2 = finetune_baseline(student, train, FAST)
        assert r1.step_losses != r2.step_losses

    def test_does_not_touch_inputs(self, small_teacher, small_task):
        student = _student(small_teacher)
        before_s, before_t = student.checksum(), small_teacher.checksum()
        finetune_baseline(student, small_task[1], FAST)
        assert student.checksum() == before_s and small_teacher.checksum() == before_t

    def test_same_seed_same_report(self, small_teacher, small_task):
        student = _student(small_teacher)
        _, a = finetune_baseline(student, small_task[1], FAST)
        _, b = finetune_baseline(student, small_task[1], FAST)
        assert a.step_losses == b.step_losses and a.epoch_losses == b.epoch_losses

    def test_gradients_reach_every_layer(self, small_teacher, small_task):
        from textsmooth import tensor as T

        student = _student(small_teacher, n_layers=2)
        smoothed, _ = smooth_dataset(small_teacher, small_task[1], SmoothingConfig())
        x = smoothed[:4]
        embedded = tf.embed_input(np.stack([s.distributions for s in x]), student)
        hidden = tf.forward_encoder(student, embedded, np.stack([s.attention_mask for s in x]))
        T.backward(T.cross_entropy(tf.classify(hidden, student), np.eye(2)[[s.label for s in x]]))
        for i in range(2):
            for name, t in student.layer(i).items():
                if name.endswith(".weight"):
                    assert np.abs(t.grad).sum() > 0, (i, name)

    def test_loss_decreases(self, small_teacher, small_task):
        smoothed, _ = smooth_dataset(small_teacher, small_task[1], SmoothingConfig())
        _, report = train_student(_student(small_teacher), smoothed, TrainConfig(epochs=6, batch_size=8, seed=1))
        assert report.epoch_losses[-1] < report.epoch_losses[0]

    def test_shape_mismatch(self, small_teacher, small_task):
        smoothed, _ = smooth_dataset(small_teacher, small_task[1], SmoothingConfig())
        for s in smoothed:
            s.distributions = np.pad(s.distributions, ((0, 0), (0, 1)))
        with pytest.raises(Exception, match="vocab"):
            train_student(_student(small_teacher), smoothed, FAST)


class TestSoftLabelKD:
    def test_requires_tuned_head(self, small_teacher, small_task):
        with pytest.raises(ContractError):
            soft_label_kd(small_teacher, _student(small_teacher), small_task[1], FAST)

    def test_alpha_zero_matches_finetuning(self, tuned_teacher, small_teacher, small_task):
        student = _student(small_teacher, seed=2)
        cfg = TrainConfig(**{**FAST.__dict__, "kd_alpha": 0.0})
        p1, r1 = soft_label_kd(tuned_teacher, student, small_task[1], cfg)
        p2, r2 = finetune_baseline(student, small_task[1], cfg)
        assert r1.step_losses == r2.step_losses
        assert p1.checksum() == p2.checksum()

    def test_high_temperature_gives_log_n_labels(self, tuned_teacher, small_teacher, small_task):
        cfg = TrainConfig(epochs=1, batch_size=8, kd_alpha=1.0, kd_temperature=1e4)
        _, report = soft_label_kd(tuned_teacher, _student(small_teacher), small_task[1], cfg)
        for loss in report.step_losses:
            assert abs(loss - math.log(2)) < 1e-3

    def test_soft_labels_are_distributions(self, tuned_teacher, small_task):
        probs = distill.soft_labels(tuned_teacher, small_task[1], 2.0)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)


class TestEvaluate:
    def test_memorised_training_set(self, small_teacher, small_task):
        train = small_task[1]
        part = Dataset(train.instances[:8], train.label_set, train.max_seq_len, train.vocab)
        params, _ = finetune_baseline(_student(small_teacher), part,
                                      TrainConfig(epochs=40, batch_size=8, learning_rate=3e-3))
        result = evaluate(params, part)
        assert result.accuracy == 1.0
        assert sum(result.total_per_class) == 8

    def test_untrained_is_near_chance(self, small_teacher, small_task):
        accs = [evaluate(_student(small_teacher, seed=s), small_task[2]).accuracy for s in range(5)]
        assert abs(np.mean(accs) - 0.5) <= 0.1

    def test_deterministic_and_counts(self, small_teacher, small_task):
        student = _student(small_teacher)
        a, b = evaluate(student, small_task[2]), evaluate(student, small_task[2])
        assert a == b
        assert a.total_per_class == [20, 20]
        assert a.accuracy == pytest.approx(sum(a.correct_per_class) / 40)

    def test_uses_id_inputs_only(self, small_teacher, small_task, monkeypatch):
        real = tf.embed_input

        def spy(token_input, params, *args, **kwargs):
            assert np.issubdtype(np.asarray(token_input).dtype, np.integer), "distribution input at inference"
            return real(token_input, params, *args, **kwargs)

        monkeypatch.setattr(tf, "embed_input", spy)
        evaluate(_student(small_teacher), small_task[2])


class TestMetrics:
    def test_round_trip(self, tmp_path):
        r = MetricsReport("textsmooth", 3, [0.5, 0.25, 0.125], [0, 0, 1], [0.375, 0.125], [0.1, 0.2], 0.75, 40)
        other = MetricsReport("bert_small", 3, [1.0], [0], [1.0], [0.3], 0.5, 0)
        path = tmp_path / "m.jsonl"
        write_metrics(path, [r, other])
        back = read_metrics(path)
        assert back == [r, other]
        kinds = [line for line in path.read_text().splitlines()]
        assert len(kinds) == 3 + 2 + 1 + 1 + 1 + 1

    def test_record_fields(self):
        r = MetricsReport("x", 0, [1.0], [0], [1.0], [0.5], 0.5, 7)
        for record in r.to_records():
            assert {"method", "seed", "epoch", "loss", "accuracy", "seconds", "forward_count"} <= set(record)


class TestComparison:
    def test_small_run(self, small_teacher, small_task):
        _, train, test = small_task
        cfg = ComparisonConfig(small_teacher.config, _student(small_teacher).config, None,
                               TrainConfig(epochs=1, batch_size=8), SmoothingConfig(), seeds=(0, 1))
        before = small_teacher.checksum()
        report = run_comparison(cfg, small_teacher, train, test)
        assert [(r["method"], r["seed"]) for r in report.rows()] == [
            (m, s) for m in distill.METHODS for s in (0, 1)]
        assert report.forward_count == train.N
        assert report.teacher_checksum_before == report.teacher_checksum_after == before
        assert not report.failures
        for stats in report.summary().values():
            assert stats["n"] == 2 and 0 <= stats["mean"] <= 1
        table = report.format_table()
        assert "textsmooth" in table and "teacher forwards during smoothing: 40" in table

    def test_failures_are_collected(self, small_teacher, small_task, monkeypatch):
        _, train, test = small_task
        calls = []
        real = distill.train_student

        def flaky(student, smoothed, cfg, method="textsmooth"):
            calls.append(cfg.seed)
            if cfg.seed == 0:
                raise RuntimeError("boom")
            return real(student, smoothed, cfg, method)

        monkeypatch.setattr(distill, "train_student", flaky)
        cfg = ComparisonConfig(small_teacher.config, _student(small_teacher).config, None,
                               TrainConfig(epochs=1, batch_size=8), seeds=(0, 1), methods=("textsmooth", "bert_small"))
        report = run_comparison(cfg, small_teacher, train, test)
        assert calls == [0, 1]
        assert report.failures == [("textsmooth", 0, "RuntimeError: boom")]
        assert len(report.reports) == 3
        assert "FAILED textsmooth seed=0" in report.format_table()
