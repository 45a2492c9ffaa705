import io
import json

import numpy as np
import pytest

from textsmooth import distill
from textsmooth.checkpoint import load_checkpoint
from textsmooth.cli import main
from textsmooth.config import build_config, load_config, parse_lines
from textsmooth.errors import ConfigError
from textsmooth.smoothing import load_smoothed

TINY = """
# tiny end-to-end run
teacher.n_layers = 2
teacher.emb_size = 16
teacher.n_heads = 2
teacher.ffn_size = 32
student.n_layers = 1
pretrain.epochs = 2
pretrain.batch_size = 32
pretrain.learning_rate = 0.002
train.epochs = 2
train.batch_size = 8
train.seed = 1
smooth.lambda = 0.5
data.source = synthetic
data.n_corpus = 120
data.n_train = 24
data.n_test = 20
data.pool_size = 6
seeds = 0 1
"""


def run(*argv):
    out = io.StringIO()
    code = main([str(a) for a in argv], out=out)
    return code, out.getvalue()


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY + f"output_dir = {tmp_path / 'out'}\n", encoding="utf-8")
    return path


@pytest.fixture
def pretrained(cfg_file):
    code, _ = run("pretrain", cfg_file)
    assert code == 0
    return cfg_file


class TestConfig:
    def test_parse(self):
        raw = parse_lines(["a.b = 1  # note", "", "# c = 2", "smooth.lambda=0.3"])
        assert raw == {"a.b": "1", "smooth.lam": "0.3"}

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match=":1:"):
            parse_lines(["nonsense"])

    def test_defaults_and_student_inherits_widths(self):
        cfg = build_config({"teacher.emb_size": "32", "teacher.n_heads": "2"})
        assert cfg.student == {"n_layers": 1, "emb_size": 32, "n_heads": 2}
        assert cfg.smoothing.lam == 0.5
        assert cfg.seeds == (0, 1, 2, 3, 4)

    def test_all_errors_reported_together(self):
        with pytest.raises(ConfigError) as info:
            build_config({"smooth.lam": "1.5", "train.epochs": "x", "bogus.key": "1",
                          "teacher.n_layers": "1", "student.n_layers": "2"})
        msg = str(info.value)
        for fragment in ("smooth", "train.epochs", "bogus.key", "student.n_layers"):
            assert fragment in msg

    def test_missing_data_paths(self, tmp_path):
        with pytest.raises(ConfigError, match="nope.tsv"):
            build_config({"data.source": "files", "data.corpus": str(tmp_path / "c"),
                          "data.train": str(tmp_path / "nope.tsv"), "data.test": str(tmp_path / "t")})

    def test_overrides_win(self, cfg_file):
        cfg = load_config(cfg_file, {"train.epochs": "5", "smooth.lambda": "1"})
        assert cfg.train.epochs == 5 and cfg.smoothing.lam == 1.0


class TestExitCodes:
    def test_no_args_is_usage_error(self):
        assert run()[0] == 1

    def test_unknown_override(self, cfg_file):
        assert run("pretrain", cfg_file, "--nope.key", "1")[0] == 1

    def test_bad_lambda_before_compute(self, cfg_file, tmp_path):
        code, _ = run("smooth", cfg_file, "--smooth.lambda", "2")
        assert code == 1
        assert not (tmp_path / "out").exists()

    def test_missing_config(self, tmp_path):
        assert run("pretrain", tmp_path / "missing.cfg")[0] == 1

    def test_missing_teacher(self, cfg_file, capsys):
        code, _ = run("smooth", cfg_file)
        assert code == 2
        assert "teacher.ckpt" in capsys.readouterr().err

    def test_missing_corpus_names_path(self, tmp_path, capsys):
        cfg = tmp_path / "files.cfg"
        cfg.write_text(f"data.source = files\ndata.corpus = {tmp_path / 'corpus.txt'}\n"
                       f"data.train = {tmp_path / 'a'}\ndata.test = {tmp_path / 'b'}\n", encoding="utf-8")
        assert run("pretrain", cfg)[0] == 1
        assert "corpus.txt" in capsys.readouterr().err


class TestPipeline:
    def test_pretrain_is_reproducible(self, pretrained, tmp_path):
        ckpt = tmp_path / "out" / "checkpoints" / "teacher.ckpt"
        first = load_checkpoint(ckpt)[0].checksum()
        assert run("pretrain", pretrained)[0] == 0
        assert load_checkpoint(ckpt)[0].checksum() == first

    def test_smooth_prints_forward_count(self, pretrained, tmp_path):
        code, out = run("smooth", pretrained)
        assert code == 0
        assert "forward_count 24" in out and "lambda 0.5" in out
        smoothed, header = load_smoothed(tmp_path / "out" / "caches" / "train_smoothed.cache")
        assert len(smoothed) == header["N"] == 24

    def test_distill_at_lambda_one_matches_finetune(self, pretrained, tmp_path):
        assert run("smooth", pretrained, "--smooth.lambda", "1")[0] == 0
        code, out = run("distill", pretrained, "--smooth.lambda", "1")
        assert code == 0
        assert out.strip().splitlines()[-1].startswith("accuracy ")
        assert run("finetune", pretrained)[0] == 0
        metrics = tmp_path / "out" / "metrics"
        (a,), (b,) = distill.read_metrics(metrics / "textsmooth.jsonl"), distill.read_metrics(metrics / "bert_small.jsonl")
        assert a.step_losses == b.step_losses
        assert a.forward_count == 24

    def test_distill_needs_cache(self, pretrained):
        assert run("distill", pretrained)[0] == 2

    def test_kd(self, pretrained, tmp_path):
        code, out = run("kd", pretrained)
        assert code == 0
        assert (tmp_path / "out" / "checkpoints" / "teacher_finetuned.ckpt").exists()
        assert (tmp_path / "out" / "checkpoints" / "student_soft_label_kd.ckpt").exists()
        # the smoothing teacher is untouched by the KD teacher's fine-tuning
        _, _, header = load_checkpoint(tmp_path / "out" / "checkpoints" / "teacher.ckpt")
        assert "fingerprint" in header["extra"]

    def test_sample(self, pretrained, tmp_path):
        args = ("sample", pretrained, "--text", "the film has some superb effects", "--n-samples", "50",
                "--n-report", "5", "--seed", "3", "--smooth.lambda", "0.2")
        code, first = run(*args)
        assert code == 0
        lines = first.strip().splitlines()
        assert lines[0] == "the film has some superb effects"
        assert len(lines) == 6
        assert len({line.split("\t")[2] for line in lines[1:]}) == 5
        assert run(*args)[1] == first
        assert (tmp_path / "out" / "reports" / "samples.txt").read_text(encoding="utf-8") == first

    def test_sample_unknown_words_and_empty_file(self, pretrained, tmp_path):
        code, out = run("sample", pretrained, "--text", "zzz qqq", "--n-samples", "5", "--n-report", "2")
        assert code == 0 and out.startswith("zzz qqq\n")
        empty = tmp_path / "empty.txt"
        empty.write_text("", encoding="utf-8")
        assert run("sample", pretrained, "--input", empty) == (0, "")

    def test_sample_needs_text(self, pretrained):
        assert run("sample", pretrained)[0] == 1

    def test_compare(self, pretrained, tmp_path):
        code, out = run("compare", pretrained)
        assert code == 0
        assert "reusing teacher" in out
        summary = (tmp_path / "out" / "reports" / "summary.txt").read_text(encoding="utf-8")
        for method in distill.METHODS:
            assert method in summary
        records = [json.loads(line) for line in (tmp_path / "out" / "metrics" / "compare.jsonl").open()]
        assert {(r["method"], r["seed"]) for r in records} == {(m, s) for m in distill.METHODS for s in (0, 1)}
        assert "seconds/epoch" in out

    def test_compare_failure_exits_nonzero(self, pretrained, monkeypatch):
        def broken(*args, **kwargs):
            raise RuntimeError("broken run")

        monkeypatch.setattr(distill, "soft_label_kd", broken)
        code, out = run("compare", pretrained)
        assert code == 2
        assert "FAILED soft_label_kd" in out
        assert "textsmooth" in out

    def test_files_source(self, tmp_path):
        (tmp_path / "corpus.txt").write_text("a good film\na bad film\na fine story\n" * 10, encoding="utf-8")
        (tmp_path / "train.tsv").write_text("pos\ta good film\nneg\ta bad film\n" * 4, encoding="utf-8")
        (tmp_path / "test.tsv").write_text("pos\ta good story\nneg\ta bad story\n", encoding="utf-8")
        cfg = tmp_path / "files.cfg"
        cfg.write_text(
            "teacher.emb_size = 8\nteacher.n_heads = 2\nteacher.ffn_size = 16\npretrain.epochs = 1\n"
            "train.epochs = 1\ndata.source = files\ndata.max_seq_len = 8\n"
            f"data.corpus = {tmp_path / 'corpus.txt'}\ndata.train = {tmp_path / 'train.tsv'}\n"
            f"data.test = {tmp_path / 'test.tsv'}\noutput_dir = {tmp_path / 'out'}\n", encoding="utf-8")
        assert run("pretrain", cfg)[0] == 0
        assert run("smooth", cfg)[0] == 0
        code, out = run("distill", cfg)
        assert code == 0
        acc = float(out.strip().splitlines()[-1].split()[1])
        assert 0.0 <= acc <= 1.0
        assert np.isfinite(acc)
