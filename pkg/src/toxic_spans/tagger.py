"""BiLSTM-CRF sequence tagger over IO or BIO tags.

Per token: word lookup ++ char-BiLSTM embedding, a sentence BiLSTM
(optional), a linear layer to one score per tag, then either a linear-chain
CRF or an independent softmax per token.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from . import crf as crf_mod
from . import neural_core as nc
from .encoder import Batch, EncoderConfig, Vocab, encode, encode_backward, init_encoder, make_batch
from .metrics import corpus_f1
from .span_codec import (
    OverlapPolicy,
    TagScheme,
    TagSequence,
    tags_to_token_spans,
    token_spans_to_offsets,
    token_spans_to_tags,
)
from .text_prep import prepare
from .training import (
    EpochLog,
    Example,
    NumericError,
    PlateauSchedule,
    TrainResult,
    batches,
    child_rng,
    make_examples,
)

logger = logging.getLogger(__name__)


@dataclass
class TaggerConfig(EncoderConfig):
    scheme: TagScheme = TagScheme.IO
    use_crf: bool = True
    use_preprocessing: bool = True
    constrain_transitions: bool = False
    include_gaps: bool = True
    overlap: OverlapPolicy = OverlapPolicy.ANY
    seed: int = 0

    def __post_init__(self):
        self.scheme = TagScheme(self.scheme)
        self.overlap = OverlapPolicy(self.overlap)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scheme"] = self.scheme.value
        d["overlap"] = self.overlap.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TaggerConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class TrainSchedule:
    optimizer: str = "sgd"
    initial_lr: float = 0.01
    min_lr: float = 1e-4
    halving_patience: int = 4
    max_epochs: int = 100
    batch_size: int = 8
    stop_patience: int = 4
    clip_norm: Optional[float] = 5.0
    target_f1: Optional[float] = None  # stop once dev F1 reaches this

    def validate(self):
        if self.min_lr > self.initial_lr:
            raise ValueError("min_lr must not exceed initial_lr")
        if self.halving_patience < 1 or self.stop_patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ValueError("batch_size must be >= 1 and max_epochs >= 0")


class Tagger:
    arch = "tagger"

    def __init__(self, config: TaggerConfig, words: Vocab, chars: Vocab, params: Optional[nc.ModelParams] = None):
        config.validate()
        self.config = config
        self.words = words
        self.chars = chars
        self.params = params if params is not None else self._init_params()

    # ------------------------------------------------------------ construction

    @classmethod
    def build(cls, config: TaggerConfig, texts: Sequence[str]) -> "Tagger":
        """Vocabularies from the (prepared) training texts, fresh seeded parameters."""
        sents = [[t.surface for t in prepare(x, config.use_preprocessing)] for x in texts]
        words = Vocab.build(sents)
        chars = Vocab.build(w for s in sents for w in s)
        return cls(config, words, chars)

    def _init_params(self) -> nc.ModelParams:
        cfg = self.config
        rng = child_rng(cfg.seed, 0)
        params = nc.ModelParams()
        init_encoder(params, cfg, len(self.words), len(self.chars), rng)
        S = cfg.scheme.size
        params.add("out.W", nc.xavier_init(rng, cfg.output_dim, S))
        params.add("out.b", np.zeros(S))
        if cfg.use_crf:
            params.add("crf.transitions", np.zeros((S, S)))
            params.add("crf.start", np.zeros(S))
            params.add("crf.stop", np.zeros(S))
        return params

    def expected_shapes(self) -> Dict[str, tuple]:
        return {k: v.shape for k, v in self._init_params().values.items()}

    # ------------------------------------------------------------ forward

    def crf_params(self) -> crf_mod.CrfParams:
        p = self.params
        crf = crf_mod.CrfParams(p["crf.transitions"], p["crf.start"], p["crf.stop"])
        if self.config.constrain_transitions and self.config.scheme is TagScheme.BIO:
            t_pen, s_pen = crf_mod.bio_constraints()
            crf = crf_mod.CrfParams(crf.transitions + t_pen, crf.start + s_pen, crf.stop)
        return crf

    def make_batch(self, sentences: Sequence[Sequence[str]]) -> Batch:
        return make_batch(sentences, self.words, self.chars, self.config.max_word_chars)

    def forward(self, batch: Batch, rng=None):
        """Emission scores (B, T, |S|) and the cache for :meth:`backward`."""
        reps, enc_cache = encode(self.params, self.config, batch, rng)
        em, _ = nc.linear_forward(reps, self.params["out.W"], self.params["out.b"])
        return em, (reps, enc_cache)

    def tag_probabilities(self, em: np.ndarray) -> np.ndarray:
        return nc.softmax(em, axis=-1)

    def loss_and_grad(self, sentences: Sequence[Sequence[str]], gold: Sequence[Sequence[int]], rng=None) -> float:
        """Mean per-sentence loss; gradients are left in ``self.params.grads``."""
        p = self.params
        p.zero_grad()
        batch = self.make_batch(sentences)
        em, (reps, enc_cache) = self.forward(batch, rng)
        B = len(sentences)
        d_em = np.zeros_like(em)
        total = 0.0
        if self.config.use_crf:
            crf = self.crf_params()
            for b in range(B):
                L = int(batch.lengths[b])
                loss, g = crf_mod.nll_and_grad(em[b, :L], crf, gold[b])
                total += loss
                d_em[b, :L] = g.em / B
                p.grads["crf.transitions"] += g.transitions / B
                p.grads["crf.start"] += g.start / B
                p.grads["crf.stop"] += g.stop / B
        else:
            logp = nc.log_softmax(em, axis=-1)
            probs = np.exp(logp)
            for b in range(B):
                L = int(batch.lengths[b])
                idx = np.asarray(gold[b], dtype=np.int64)
                total -= float(logp[b, np.arange(L), idx].sum())
                d = probs[b, :L].copy()
                d[np.arange(L), idx] -= 1.0
                d_em[b, :L] = d / B
        d_reps, dW, db = nc.linear_backward(d_em, reps, p["out.W"])
        p.grads["out.W"] += dW
        p.grads["out.b"] += db
        encode_backward(d_reps, enc_cache, p)
        return total / B

    def loss_fn(self, sentences, gold) -> Callable[[], Tuple[float, Dict[str, np.ndarray]]]:
        """Deterministic (dropout-free) closure for gradient checking."""
        def fn():
            loss = self.loss_and_grad(sentences, gold, rng=None)
            return loss, self.params.grads
        return fn

    # ------------------------------------------------------------ decoding

    def decode_tags(self, sentences: Sequence[Sequence[str]]) -> List[List[int]]:
        if not sentences:
            return []
        batch = self.make_batch(sentences)
        em, _ = self.forward(batch)
        out = []
        crf = self.crf_params() if self.config.use_crf else None
        for b in range(len(sentences)):
            L = int(batch.lengths[b])
            if crf is not None:
                path, _ = crf_mod.viterbi(em[b, :L], crf)
            else:
                path = [int(k) for k in np.argmax(em[b, :L], axis=-1)]
            out.append(path)
        return out

    def predict_posts(self, texts: Sequence[str], batch_size: int = 64) -> List[Set[int]]:
        token_lists = [prepare(t, self.config.use_preprocessing) for t in texts]
        preds: List[Set[int]] = [set() for _ in texts]
        todo = [i for i, toks in enumerate(token_lists) if toks]
        for start in range(0, len(todo), batch_size):
            chunk = todo[start : start + batch_size]
            paths = self.decode_tags([[t.surface for t in token_lists[i]] for i in chunk])
            for i, path in zip(chunk, paths):
                tags = TagSequence.from_ids(path, self.config.scheme)
                spans = tags_to_token_spans(tags)
                preds[i] = token_spans_to_offsets(spans, token_lists[i], self.config.include_gaps)
        return preds

    def predict_post(self, text: str) -> Set[int]:
        return self.predict_posts([text])[0]

    def evaluate(self, examples: Sequence[Example]) -> float:
        preds = self.predict_posts([ex.text for ex in examples])
        return corpus_f1([(p, ex.gold) for p, ex in zip(preds, examples)])

    def gold_tags(self, ex: Example) -> List[int]:
        return token_spans_to_tags(ex.spans, len(ex.tokens), self.config.scheme).ids()


def train(
    model: Tagger,
    train_records,
    dev_records,
    schedule: TrainSchedule,
    on_epoch: Optional[Callable[[EpochLog], None]] = None,
) -> TrainResult:
    """Mini-batch training with dev-F1 LR halving and best-checkpoint selection.

    The dev score of the untrained model is the baseline, so the first
    epoch must beat it to count as an improvement. On return the model
    holds the best parameters.
    """
    schedule.validate()
    cfg = model.config
    train_ex = [ex for ex in make_examples(train_records, cfg.use_preprocessing, cfg.overlap) if ex.tokens]
    if not train_ex:
        raise ValueError("training set has no non-empty posts")
    dev_ex = make_examples(dev_records, cfg.use_preprocessing, cfg.overlap)
    sents = [ex.surfaces for ex in train_ex]
    gold = [model.gold_tags(ex) for ex in train_ex]
    rng = child_rng(cfg.seed, 1)

    plateau = PlateauSchedule(schedule.initial_lr, schedule.min_lr, schedule.halving_patience, schedule.stop_patience)
    optimizer = nc.make_optimizer(schedule.optimizer, schedule.initial_lr)
    best_params = model.params.copy()
    plateau.update(model.evaluate(dev_ex) if dev_ex else 0.0)
    result = TrainResult(best_params, best_dev_f1=plateau.best)
    steps = 0
    for epoch in range(1, schedule.max_epochs + 1):
        lr = plateau.lr
        optimizer.lr = lr
        epoch_loss = 0.0
        for idx in batches(len(train_ex), schedule.batch_size, rng):
            loss = model.loss_and_grad([sents[i] for i in idx], [gold[i] for i in idx], rng)
            if not math.isfinite(loss) or not math.isfinite(model.params.grad_norm()):
                model.params.load_values(best_params)
                raise NumericError(f"non-finite loss at epoch {epoch}, step {steps + 1}", best_params, result.log)
            nc.clip_grad_norm(model.params, schedule.clip_norm)
            optimizer.step(model.params)
            epoch_loss += loss * len(idx)
            steps += 1
        dev_f1 = model.evaluate(dev_ex) if dev_ex else 0.0
        entry = EpochLog(epoch, epoch_loss / len(train_ex), dev_f1, lr, steps)
        result.log.append(entry)
        logger.info("epoch %d loss %.4f dev F1 %.4f lr %.3g", epoch, entry.loss, dev_f1, lr)
        if on_epoch:
            on_epoch(entry)
        if plateau.update(dev_f1):
            best_params = model.params.copy()
        if plateau.should_stop or (schedule.target_f1 is not None and dev_f1 >= schedule.target_f1):
            break
    model.params.load_values(best_params)
    result.params = model.params
    result.best_dev_f1 = plateau.best
    result.steps = steps
    return result
