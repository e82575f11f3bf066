"""INI run configuration.

Section keys are the conventional hyperparameter names (``BiLSTM size``,
``FFNN dropout``...). Example::

    [run]
    architecture = tagger
    seed = 13
    train = train.csv
    dev = dev.csv

    [tagger]
    Scheme = io
    BiLSTM size = 256
    Optimiser = SGD
    Learning rate = 0.01
"""
from __future__ import annotations

import configparser
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple

from .biaffine import BiaffineConfig, BiaffineSchedule
from .span_codec import TagScheme
from .tagger import TaggerConfig, TrainSchedule
from .training import ConfigError

logger = logging.getLogger(__name__)

ARCHITECTURES = ("tagger", "biaffine")

# Pretrained-encoder settings have no counterpart here; they are accepted and ignored.
IGNORED_KEYS = {
    "Transformer size", "Transformer encoder layers", "BERT size", "BERT encoder layers",
    "Char CNN size", "Char CNN filter width",
}


def _bool(v: str) -> bool:
    v = v.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _opt(conv):
    def f(v: str):
        v = v.strip()
        return None if v.lower() in ("", "none", "inf") else conv(v)
    return f


def _lr(v: str) -> float:
    # a "[start, floor]" range: the first value is the learning rate
    v = v.strip()
    if v.startswith("["):
        v = v.strip("[]").split(",")[0]
    return float(v)


def _lr_floor(v: str) -> Optional[float]:
    v = v.strip()
    if v.startswith("["):
        parts = v.strip("[]").split(",")
        if len(parts) == 2:
            return float(parts[1])
    return None


# key -> (target object, attribute, converter)
TAGGER_KEYS: Dict[str, Tuple[str, str, Callable]] = {
    "Scheme": ("model", "scheme", lambda v: TagScheme(v.strip().lower())),
    "CRF": ("model", "use_crf", _bool),
    "LSTM": ("model", "use_lstm", _bool),
    "Pre-processing": ("model", "use_preprocessing", _bool),
    "Constrain transitions": ("model", "constrain_transitions", _bool),
    "Include gaps": ("model", "include_gaps", _bool),
    "Overlap policy": ("model", "overlap", lambda v: v.strip().lower()),
    "Word embedding size": ("model", "word_dim", int),
    "Char embedding size": ("model", "char_dim", int),
    "Char BiLSTM Hidden Size": ("model", "char_hidden", int),
    "Char BiLSTM layers": ("model", "_char_layers", int),
    "Max word chars": ("model", "max_word_chars", int),
    "BiLSTM size": ("model", "lstm_hidden", int),
    "BiLSTM layer": ("model", "lstm_layers", int),
    "BiLSTM dropout": ("model", "lstm_dropout", float),
    "Embeddings dropout": ("model", "emb_dropout", float),
    "Optimiser": ("schedule", "optimizer", lambda v: v.strip().lower()),
    "Learning rate": ("schedule", "initial_lr", _lr),
    "Min learning rate": ("schedule", "min_lr", float),
    "Patience": ("schedule", "halving_patience", int),
    "Stop patience": ("schedule", "stop_patience", int),
    "Max epochs": ("schedule", "max_epochs", int),
    "Batch size": ("schedule", "batch_size", int),
    "Clip norm": ("schedule", "clip_norm", _opt(float)),
    "Target F1": ("schedule", "target_f1", _opt(float)),
}

BIAFFINE_KEYS: Dict[str, Tuple[str, str, Callable]] = {
    "Pre-processing": ("model", "use_preprocessing", _bool),
    "LSTM": ("model", "use_lstm", _bool),
    "Include gaps": ("model", "include_gaps", _bool),
    "Overlap policy": ("model", "overlap", lambda v: v.strip().lower()),
    "fastText embedding size": ("model", "word_dim", int),
    "Word embedding size": ("model", "word_dim", int),
    "Char embedding size": ("model", "char_dim", int),
    "Char BiLSTM Hidden Size": ("model", "char_hidden", int),
    "Char BiLSTM layers": ("model", "_char_layers", int),
    "Max word chars": ("model", "max_word_chars", int),
    "BiLSTM size": ("model", "lstm_hidden", int),
    "BiLSTM layer": ("model", "lstm_layers", int),
    "BiLSTM dropout": ("model", "lstm_dropout", float),
    "FFNN size": ("model", "ffnn_size", int),
    "FFNN dropout": ("model", "ffnn_dropout", float),
    "Embeddings dropout": ("model", "emb_dropout", float),
    "Max span width": ("model", "max_width", _opt(int)),
    "Optimiser": ("schedule", "optimizer", lambda v: v.strip().lower()),
    "Learning rate": ("schedule", "lr", _lr),
    "Batch size": ("schedule", "batch_size", int),
    "Max steps": ("schedule", "max_steps", int),
    "Eval every": ("schedule", "eval_every", _opt(int)),
    "Patience": ("schedule", "patience", int),
    "Clip norm": ("schedule", "clip_norm", _opt(float)),
    "Negative ratio": ("schedule", "negative_ratio", _opt(float)),
    "Target F1": ("schedule", "target_f1", _opt(float)),
}

RUN_KEYS = {"architecture", "seed", "train", "dev", "strict"}


@dataclass
class RunConfig:
    architecture: str = "tagger"
    seed: int = 0
    tagger: TaggerConfig = field(default_factory=TaggerConfig)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    biaffine: BiaffineConfig = field(default_factory=BiaffineConfig)
    biaffine_schedule: BiaffineSchedule = field(default_factory=BiaffineSchedule)
    train_path: Optional[Path] = None
    dev_path: Optional[Path] = None
    strict: bool = True

    def model_config(self):
        return self.tagger if self.architecture == "tagger" else self.biaffine

    def apply_overrides(
        self,
        arch: Optional[str] = None,
        seed: Optional[int] = None,
        scheme: Optional[str] = None,
        no_crf: bool = False,
        no_lstm: bool = False,
        no_preprocess: bool = False,
    ) -> "RunConfig":
        if arch is not None:
            self.architecture = arch
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if self.architecture == "biaffine":
            if no_crf:
                raise ConfigError("--no-crf only applies to the tagger architecture")
            if scheme is not None:
                raise ConfigError("--scheme only applies to the tagger architecture")
        if seed is not None:
            self.seed = seed
        self.tagger.seed = self.biaffine.seed = self.seed
        if scheme is not None:
            self.tagger.scheme = TagScheme(scheme)
        if no_crf:
            self.tagger.use_crf = False
        if no_lstm:
            self.tagger.use_lstm = self.biaffine.use_lstm = False
        if no_preprocess:
            self.tagger.use_preprocessing = self.biaffine.use_preprocessing = False
        self.validate()
        return self

    def validate(self):
        try:
            self.tagger.validate()
            self.schedule.validate()
            self.biaffine.validate()
            self.biaffine_schedule.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        for opt in (self.schedule.optimizer, self.biaffine_schedule.optimizer):
            if opt not in ("sgd", "adam"):
                raise ConfigError(f"unknown optimiser {opt!r}")


def _apply_section(section, table, targets: dict, name: str):
    for key, raw in section.items():
        if key in IGNORED_KEYS:
            logger.warning("[%s] %r has no effect: pretrained encoders are not used", name, key)
            continue
        if key not in table:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        target, attr, conv = table[key]
        try:
            value = conv(raw)
        except ValueError as exc:
            raise ConfigError(f"[{name}] {key}: {exc}") from exc
        if attr == "_char_layers":
            if value != 1:
                raise ConfigError(f"[{name}] only a single char BiLSTM layer is supported")
            continue
        setattr(targets[target], attr, value)
        if attr == "initial_lr":
            floor = _lr_floor(raw)
            if floor is not None:
                targets[target].min_lr = floor


def parse_config(text: str, base_dir: Optional[Path] = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    cfg = RunConfig()
    for name in parser.sections():
        if name not in ("run", "tagger", "biaffine"):
            raise ConfigError(f"unknown config section [{name}]")
    if parser.has_section("run"):
        run = parser["run"]
        unknown = set(run) - RUN_KEYS
        if unknown:
            raise ConfigError(f"[run] unknown key(s) {sorted(unknown)}")
        cfg.architecture = run.get("architecture", cfg.architecture).strip().lower()
        try:
            cfg.seed = int(run.get("seed", str(cfg.seed)))
            cfg.strict = _bool(run.get("strict", "true"))
        except ValueError as exc:
            raise ConfigError(f"[run] {exc}") from exc
        for key, attr in (("train", "train_path"), ("dev", "dev_path")):
            if run.get(key):
                p = Path(run[key])
                if base_dir is not None and not p.is_absolute():
                    p = base_dir / p
                setattr(cfg, attr, p)
    if parser.has_section("tagger"):
        _apply_section(parser["tagger"], TAGGER_KEYS, {"model": cfg.tagger, "schedule": cfg.schedule}, "tagger")
    if parser.has_section("biaffine"):
        _apply_section(
            parser["biaffine"], BIAFFINE_KEYS, {"model": cfg.biaffine, "schedule": cfg.biaffine_schedule}, "biaffine"
        )
    try:
        cfg.tagger.__post_init__()
        cfg.biaffine.__post_init__()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, path.parent)
