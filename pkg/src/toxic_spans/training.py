"""Helpers shared by both trainers (errors, example preparation, the LR plateau schedule)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .span_codec import OverlapPolicy, TokenSpan, offsets_to_token_spans
from .text_prep import Token, prepare


class ToxicSpansError(Exception):
    exit_code = 1


class ConfigError(ToxicSpansError):
    exit_code = 1


class DataError(ToxicSpansError):
    exit_code = 2


class NumericError(ToxicSpansError):
    """Training hit a non-finite loss; ``params`` holds the last finite best checkpoint."""

    exit_code = 3

    def __init__(self, message, params=None, log=None):
        super().__init__(message)
        self.params = params
        self.log = log or []


def child_rng(seed: int, stream: int) -> np.random.Generator:
    """Independent PCG64 stream ``stream`` derived from ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream,))))


@dataclass
class Example:
    text: str
    gold: frozenset
    tokens: List[Token]
    spans: List[TokenSpan]

    @property
    def surfaces(self) -> List[str]:
        return [t.surface for t in self.tokens]


def make_examples(records, preprocess: bool = True, policy: OverlapPolicy = OverlapPolicy.ANY) -> List[Example]:
    """``records`` are objects with ``text`` and ``spans``/``gold`` offsets."""
    out = []
    for rec in records:
        gold = frozenset(rec.spans if hasattr(rec, "spans") else rec.gold)
        tokens = prepare(rec.text, preprocess)
        out.append(Example(rec.text, gold, tokens, offsets_to_token_spans(gold, tokens, policy)))
    return out


class PlateauSchedule:
    """Halve the LR after ``patience`` non-improving evaluations; stop at the floor.

    Once the LR sits at ``min_lr``, ``stop_patience`` further non-improving
    evaluations end training.
    """

    def __init__(self, initial_lr: float, min_lr: float, patience: int = 4, stop_patience: int = 4):
        if min_lr > initial_lr:
            raise ValueError("min_lr must not exceed initial_lr")
        if patience < 1 or stop_patience < 1:
            raise ValueError("patience must be >= 1")
        self.lr = initial_lr
        self.min_lr = min_lr
        self.patience = patience
        self.stop_patience = stop_patience
        self.best: Optional[float] = None
        self.bad = 0
        self.should_stop = False

    def update(self, metric: float) -> bool:
        """Record one evaluation; returns True when it is a new best."""
        if self.best is None or metric > self.best:
            self.best = metric
            self.bad = 0
            return True
        self.bad += 1
        if self.lr <= self.min_lr:
            if self.bad >= self.stop_patience:
                self.should_stop = True
        elif self.bad >= self.patience:
            self.lr = max(self.lr / 2.0, self.min_lr)
            self.bad = 0
        return False


@dataclass
class EpochLog:
    epoch: int
    loss: float
    dev_f1: float
    lr: float
    steps: int = 0


@dataclass
class TrainResult:
    params: object
    log: List[EpochLog] = field(default_factory=list)
    best_dev_f1: float = 0.0
    steps: int = 0


def batches(n: int, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]
