"""``textsmooth`` command line.

Subcommands: pretrain, smooth, distill, finetune, kd, sample, compare.  Each
takes a config file; any config key can be overridden with ``--key value``
(for example ``--train.epochs 3``).  Outputs go under ``output_dir`` in
``checkpoints/``, ``caches/``, ``metrics/`` and ``reports/``.

Exit codes: 0 success, 1 usage or config error, 2 runtime or data error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import distill
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config
from .errors import ConfigError, FormatError, IngestionError, TextSmoothError
from .sampler import format_report, top_sentences
from .smoothing import load_smoothed, mlm_distribution, save_smoothed, smooth_dataset, smooth_text
from .synthetic import make_synthetic_task
from .text import build_vocab, encode_instance, load_dataset, read_corpus, read_rows, save_dataset

log = logging.getLogger("textsmooth")

TEACHER = ("checkpoints", "teacher.ckpt")
TEACHER_FT = ("checkpoints", "teacher_finetuned.ckpt")
CACHE = ("caches", "train_smoothed.cache")


class UsageError(TextSmoothError):
    pass


def _out(cfg, *parts):
    path = cfg.path(*parts)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _pretrain_fingerprint(cfg):
    blob = json.dumps([cfg.teacher, asdict(cfg.pretrain), cfg.data], sort_keys=True, default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def prepare_data(cfg, vocab=None):
    """``(corpus, vocab, train, test)`` from the synthetic generator or from files."""
    if cfg.data["source"] == "synthetic":
        corpus, train, test = make_synthetic_task(cfg.synthetic())
        if vocab is not None and vocab != train.vocab:
            raise FormatError("teacher vocabulary does not match the synthetic task vocabulary")
        return corpus, train.vocab, train, test
    for name in ("corpus", "train", "test"):
        if not Path(cfg.data[name]).exists():
            raise IngestionError(f"data.{name}: file not found: {cfg.data[name]}")
    corpus = read_corpus(cfg.data["corpus"])
    if vocab is None:
        vocab = build_vocab(corpus, min_freq=cfg.data.get("min_freq", 1))
    train = load_dataset(cfg.data["train"], vocab, cfg.max_seq_len)
    test = load_dataset(cfg.data["test"], vocab, cfg.max_seq_len, label_set=train.label_set)
    return corpus, vocab, train, test


def _load_teacher(cfg, path=None):
    path = Path(path) if path else cfg.path(*TEACHER)
    if not path.exists():
        raise IngestionError(f"teacher checkpoint not found: {path} (run 'textsmooth pretrain' first)")
    params, vocab, header = load_checkpoint(path)
    return params, vocab, header


def _print_epochs(report, out):
    for epoch, (loss, secs) in enumerate(zip(report.epoch_losses, report.epoch_seconds)):
        print(f"epoch {epoch}\tloss {loss:.6f}\tseconds {secs:.3f}", file=out)


def _pretrain(cfg, out):
    corpus, vocab, train, _ = prepare_data(cfg)
    teacher_cfg = cfg.model_config("teacher", vocab.size, cfg.max_seq_len)
    teacher_cfg = type(teacher_cfg)(**{**teacher_cfg.to_dict(), "n_labels": len(train.label_set)})
    params, report = distill.pretrain_mlm(teacher_cfg, corpus, cfg.pretrain, vocab)
    save_checkpoint(_out(cfg, *TEACHER), params, vocab, extra={"fingerprint": _pretrain_fingerprint(cfg)})
    distill.write_metrics(_out(cfg, "metrics", "pretrain.jsonl"), [report])
    return params, vocab, report


def cmd_pretrain(cfg, args, out):
    params, _, report = _pretrain(cfg, out)
    _print_epochs(report, out)
    print(f"teacher checkpoint {cfg.path(*TEACHER)}\tchecksum {params.checksum()}", file=out)


def cmd_smooth(cfg, args, out):
    teacher, vocab, _ = _load_teacher(cfg, args.checkpoint)
    _, _, train, _ = prepare_data(cfg, vocab)
    smoothed, forwards = smooth_dataset(teacher, train, cfg.smoothing)
    save_smoothed(_out(cfg, *CACHE), smoothed, cfg.smoothing, teacher.checksum(), train.checksum())
    print(f"lambda {cfg.smoothing.lam}", file=out)
    print(f"forward_count {forwards}", file=out)
    print(f"instances {len(smoothed)}", file=out)
    print(f"cache {cfg.path(*CACHE)}", file=out)


def _finish(cfg, method, params, report, vocab, test, out):
    report.test_accuracy = distill.evaluate(params, test).accuracy
    save_checkpoint(_out(cfg, "checkpoints", f"student_{method}.ckpt"), params, vocab)
    distill.write_metrics(_out(cfg, "metrics", f"{method}.jsonl"), [report])
    _print_epochs(report, out)
    print(f"accuracy {report.test_accuracy:.6f}", file=out)


def _student(cfg, teacher, seed):
    student_cfg = cfg.model_config("student", teacher.config.vocab_size, teacher.config.max_seq_len)
    student_cfg = type(student_cfg)(**{**student_cfg.to_dict(), "n_labels": teacher.config.n_labels})
    return distill.init_student_from_teacher(teacher, student_cfg, seed=seed)


def cmd_distill(cfg, args, out):
    teacher, vocab, _ = _load_teacher(cfg, args.checkpoint)
    cache = cfg.path(*CACHE)
    if not cache.exists():
        raise IngestionError(f"smoothed cache not found: {cache} (run 'textsmooth smooth' first)")
    smoothed, header = load_smoothed(cache)
    if header["teacher_checksum"] != teacher.checksum():
        raise FormatError("smoothed cache was produced by a different teacher checkpoint")
    _, _, _, test = prepare_data(cfg, vocab)
    params, report = distill.train_student(_student(cfg, teacher, cfg.train.seed), smoothed, cfg.train)
    report.forward_count = header["N"]
    _finish(cfg, "textsmooth", params, report, vocab, test, out)


def cmd_finetune(cfg, args, out):
    teacher, vocab, _ = _load_teacher(cfg, args.checkpoint)
    _, _, train, test = prepare_data(cfg, vocab)
    params, report = distill.finetune_baseline(_student(cfg, teacher, cfg.train.seed), train, cfg.train)
    _finish(cfg, "bert_small", params, report, vocab, test, out)


def cmd_kd(cfg, args, out):
    teacher, vocab, _ = _load_teacher(cfg, args.checkpoint)
    _, _, train, test = prepare_data(cfg, vocab)
    teacher_clf, _ = distill.finetune_baseline(teacher, train, cfg.train, method="teacher_finetune")
    save_checkpoint(_out(cfg, *TEACHER_FT), teacher_clf, vocab, extra={"head_trained": True})
    params, report = distill.soft_label_kd(teacher_clf, _student(cfg, teacher, cfg.train.seed), train, cfg.train)
    _finish(cfg, "soft_label_kd", params, report, vocab, test, out)


def cmd_sample(cfg, args, out):
    teacher, vocab, _ = _load_teacher(cfg, args.checkpoint)
    if args.text is not None:
        texts = [args.text]
    elif args.input is not None:
        try:
            texts = [t for t in Path(args.input).read_text(encoding="utf-8").splitlines() if t.strip()]
        except OSError as exc:
            raise IngestionError(f"cannot read input file {args.input}: {exc}") from exc
    else:
        raise UsageError("sample needs --text or --input")
    if args.n_report > args.n_samples:
        raise UsageError("--n-report cannot exceed --n-samples")
    blocks = []
    for text in texts:
        instance = encode_instance(text, None, 0, vocab, teacher.config.max_seq_len)
        smoothed = smooth_text(instance, mlm_distribution(teacher, instance), cfg.smoothing)
        ranked = top_sentences(smoothed, args.n_samples, args.n_report, args.seed, vocab)
        blocks.append(format_report(text, ranked))
    report = "\n".join(blocks)
    report_path = _out(cfg, "reports", "samples.txt")
    report_path.write_text(report, encoding="utf-8")
    out.write(report)


def cmd_compare(cfg, args, out):
    teacher = None
    path = cfg.path(*TEACHER)
    if path.exists():
        params, vocab, header = load_checkpoint(path)
        if header.get("extra", {}).get("fingerprint") == _pretrain_fingerprint(cfg):
            teacher = params
            print(f"reusing teacher {path}", file=out)
    if teacher is None:
        teacher, vocab, report = _pretrain(cfg, out)
        print(f"pretrained teacher: final MLM loss {report.epoch_losses[-1]:.6f}", file=out)
    _, _, train, test = prepare_data(cfg, vocab)
    comparison = distill.ComparisonConfig(
        teacher=teacher.config,
        student=_student(cfg, teacher, 0).config,
        pretrain=cfg.pretrain,
        train=cfg.train,
        smoothing=cfg.smoothing,
        seeds=cfg.seeds,
    )
    result = distill.run_comparison(comparison, teacher, train, test)
    distill.write_metrics(_out(cfg, "metrics", "compare.jsonl"), result.reports)
    for r in result.reports:
        secs = " ".join(f"{s:.3f}" for s in r.epoch_seconds)
        print(f"{r.method}\tseed {r.seed}\taccuracy {r.test_accuracy:.4f}\tseconds/epoch {secs}", file=out)
    table = result.format_table()
    _out(cfg, "reports", "summary.txt").write_text(table + "\n", encoding="utf-8")
    print(table, file=out)
    if result.failures:
        raise distill.ComparisonFailed(f"{len(result.failures)} run(s) failed")


COMMANDS = {
    "pretrain": cmd_pretrain,
    "smooth": cmd_smooth,
    "distill": cmd_distill,
    "finetune": cmd_finetune,
    "kd": cmd_kd,
    "sample": cmd_sample,
    "compare": cmd_compare,
}


def _parse_overrides(extra):
    """``--key value`` / ``--key=value`` pairs left over by argparse."""
    overrides, i = {}, 0
    while i < len(extra):
        token = extra[i]
        if not token.startswith("--"):
            raise UsageError(f"unexpected argument {token!r}")
        key = token[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            if i + 1 >= len(extra):
                raise UsageError(f"missing value for {token}")
            i += 1
            value = extra[i]
        overrides[key] = value
        i += 1
    return overrides


def build_parser():
    parser = argparse.ArgumentParser(prog="textsmooth", description="Text-smoothing distillation toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="key = value config file")
        if name != "pretrain" and name != "compare":
            p.add_argument("--checkpoint", help="teacher checkpoint (default: output_dir/checkpoints/teacher.ckpt)")
        if name == "sample":
            p.add_argument("--text")
            p.add_argument("--input", help="file with one sentence per line")
            p.add_argument("--n-samples", type=int, default=200)
            p.add_argument("--n-report", type=int, default=5)
            p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None, out=None):
    out = out or sys.stdout
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config, _parse_overrides(extra))
        COMMANDS[args.command](cfg, args, out)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TextSmoothError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
