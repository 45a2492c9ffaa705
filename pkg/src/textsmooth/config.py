"""Experiment configuration: ``key = value`` files with dotted section prefixes.

Sections
--------
``teacher.*`` / ``student.*``   ModelConfig fields (vocab_size and max_seq_len
                                are filled in from the data)
``pretrain.*``                  TrainConfig for teacher MLM pretraining
``train.*``                     TrainConfig for the student phases
``smooth.*``                    lam, exempt_special_tokens
``data.*``                      source = synthetic | files, plus its options
top level                       seeds, output_dir
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .distill import TrainConfig
from .errors import ConfigError
from .smoothing import SmoothingConfig
from .synthetic import SyntheticConfig
from .transformer import ModelConfig

_MODEL_KEYS = {f.name: f.type for f in dataclasses.fields(ModelConfig)}
_DERIVED_MODEL_KEYS = {"vocab_size", "max_seq_len"}
_SECTION_TYPES = {
    "teacher": ModelConfig,
    "student": ModelConfig,
    "pretrain": TrainConfig,
    "train": TrainConfig,
    "smooth": SmoothingConfig,
}
_DATA_KEYS = {
    "source": str,
    "corpus": str,
    "train": str,
    "test": str,
    "min_freq": int,
    **{f.name: f.type for f in dataclasses.fields(SyntheticConfig)},
}
_TOP_KEYS = {"seeds", "output_dir"}
_ALIASES = {"smooth.lambda": "smooth.lam"}


def _convert(value, kind):
    kind = kind if isinstance(kind, str) else kind.__name__
    value = value.strip()
    if kind == "bool":
        low = value.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"expected a boolean, got {value!r}")
    if kind == "int":
        return int(value)
    if kind == "float":
        return float(value)
    return value


def parse_lines(lines, source="<config>"):
    """Raw ``{key: value}`` from config lines; later keys win."""
    raw = {}
    for line_no, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{source}:{line_no}: expected 'key = value'")
        key, value = (part.strip() for part in text.split("=", 1))
        raw[_ALIASES.get(key, key)] = value
    return raw


def read_config_file(path):
    path = Path(path)
    try:
        return parse_lines(path.read_text(encoding="utf-8").splitlines(), str(path))
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc


@dataclass
class ExperimentConfig:
    teacher: dict = field(default_factory=dict)
    student: dict = field(default_factory=dict)
    pretrain: TrainConfig = field(default_factory=TrainConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    data: dict = field(default_factory=lambda: {"source": "synthetic"})
    seeds: tuple = (0, 1, 2, 3, 4)
    output_dir: Path = Path("runs/default")

    def model_config(self, role, vocab_size, max_seq_len):
        return ModelConfig(**{**getattr(self, role), "vocab_size": vocab_size, "max_seq_len": max_seq_len})

    @property
    def max_seq_len(self):
        return int(self.data.get("max_seq_len", SyntheticConfig.max_seq_len))

    def synthetic(self):
        fields = {f.name for f in dataclasses.fields(SyntheticConfig)}
        return SyntheticConfig(**{k: v for k, v in self.data.items() if k in fields})

    def path(self, *parts):
        return Path(self.output_dir).joinpath(*parts)


def build_config(raw, check_paths=True):
    """Validate every key of ``raw`` and return an :class:`ExperimentConfig`.

    All problems are collected and raised together as one ConfigError.
    """
    errors = []
    sections = {name: {} for name in _SECTION_TYPES}
    data = {"source": "synthetic"}
    cfg = ExperimentConfig()

    for key, value in raw.items():
        key = _ALIASES.get(key, key)
        if key in _TOP_KEYS:
            try:
                if key == "seeds":
                    cfg.seeds = tuple(int(s) for s in value.replace(",", " ").split())
                    if not cfg.seeds:
                        raise ValueError("empty seed list")
                else:
                    cfg.output_dir = Path(value)
            except ValueError as exc:
                errors.append(f"{key}: {exc}")
            continue
        section, _, name = key.partition(".")
        if section == "data":
            if name not in _DATA_KEYS:
                errors.append(f"unknown key {key!r}")
                continue
            try:
                data[name] = _convert(value, _DATA_KEYS[name])
            except ValueError as exc:
                errors.append(f"{key}: {exc}")
            continue
        if section not in _SECTION_TYPES:
            errors.append(f"unknown key {key!r}")
            continue
        kinds = {f.name: f.type for f in dataclasses.fields(_SECTION_TYPES[section])}
        if name not in kinds or (section in ("teacher", "student") and name in _DERIVED_MODEL_KEYS):
            errors.append(f"unknown key {key!r}")
            continue
        try:
            sections[section][name] = _convert(value, kinds[name])
        except ValueError as exc:
            errors.append(f"{key}: {exc}")

    for section in ("pretrain", "train"):
        try:
            setattr(cfg, section, TrainConfig(**sections[section]))
        except (ConfigError, TypeError) as exc:
            errors.append(f"{section}: {exc}")
    try:
        cfg.smoothing = SmoothingConfig(**sections["smooth"])
    except Exception as exc:  # noqa: BLE001 - any construction failure is a config error
        errors.append(f"smooth: {exc}")
    for role in ("teacher", "student"):
        try:
            ModelConfig(**{**sections[role], "vocab_size": 5, "max_seq_len": 3})
        except (ConfigError, TypeError) as exc:
            errors.append(f"{role}: {exc}")
    cfg.teacher, cfg.student = sections["teacher"], sections["student"]
    t_layers = cfg.teacher.get("n_layers", ModelConfig.n_layers)
    s_layers = cfg.student.get("n_layers", 1)
    cfg.student.setdefault("n_layers", s_layers)
    if s_layers > t_layers:
        errors.append(f"student.n_layers={s_layers} exceeds teacher.n_layers={t_layers}")
    for name in ("emb_size", "n_heads", "ffn_size", "mlm_bias"):
        if name in cfg.teacher and cfg.student.get(name, cfg.teacher[name]) != cfg.teacher[name]:
            errors.append(f"student.{name} must equal teacher.{name}")
        elif name in cfg.teacher:
            cfg.student[name] = cfg.teacher[name]

    if data["source"] not in ("synthetic", "files"):
        errors.append(f"data.source must be 'synthetic' or 'files', got {data['source']!r}")
    if data["source"] == "files":
        for name in ("corpus", "train", "test"):
            if name not in data:
                errors.append(f"data.{name} is required when data.source = files")
            elif check_paths and not Path(data[name]).exists():
                errors.append(f"data.{name}: file not found: {data[name]}")
    else:
        try:
            fields = {f.name for f in dataclasses.fields(SyntheticConfig)}
            SyntheticConfig(**{k: v for k, v in data.items() if k in fields})
        except TypeError as exc:
            errors.append(f"data: {exc}")
    cfg.data = data

    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    return cfg


def load_config(path, overrides=None, check_paths=True):
    raw = read_config_file(path)
    raw.update({_ALIASES.get(k, k): v for k, v in (overrides or {}).items()})
    return build_config(raw, check_paths=check_paths)
