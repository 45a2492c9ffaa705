import sys
from pathlib import Path
from types import SimpleNamespace

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from textsmooth.cli import prepare_data  # noqa: E402
from textsmooth.config import load_config  # noqa: E402
from textsmooth.distill import TrainConfig, pretrain_mlm  # noqa: E402
from textsmooth.synthetic import SyntheticConfig, make_synthetic_task  # noqa: E402
from textsmooth.transformer import ModelConfig  # noqa: E402

DESK_CONFIG = Path(__file__).parent.parent / "configs" / "desk_scale.cfg"
SMALL_TASK = SyntheticConfig(seed=0, n_train=40, n_test=40, n_corpus=400, pool_size=8, max_seq_len=16)


@pytest.fixture(scope="session")
def small_task():
    return make_synthetic_task(SMALL_TASK)


@pytest.fixture(scope="session")
def small_teacher(small_task):
    """A 2-layer teacher briefly pretrained on the small corpus."""
    corpus, train, _ = small_task
    cfg = ModelConfig(n_layers=2, emb_size=32, n_heads=4, ffn_size=64,
                      vocab_size=train.vocab.size, max_seq_len=SMALL_TASK.max_seq_len)
    params, _ = pretrain_mlm(cfg, corpus, TrainConfig(epochs=8, batch_size=32, learning_rate=2e-3), train.vocab)
    return params


@pytest.fixture(scope="session")
def desk():
    """The desk-scale task and its MLM-pretrained (not task-tuned) teacher."""
    cfg = load_config(DESK_CONFIG)
    corpus, vocab, train, test = prepare_data(cfg)
    teacher_cfg = cfg.model_config("teacher", vocab.size, cfg.max_seq_len)
    teacher_cfg = ModelConfig(**{**teacher_cfg.to_dict(), "n_labels": len(train.label_set)})
    teacher, report = pretrain_mlm(teacher_cfg, corpus, cfg.pretrain, vocab)
    return SimpleNamespace(cfg=cfg, corpus=corpus, vocab=vocab, train=train, test=test,
                           teacher=teacher, pretrain=report)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
