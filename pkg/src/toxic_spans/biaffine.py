"""Biaffine span scorer with ranked, clash-free greedy decoding.

Every candidate span (s, e) with s <= e gets a category score vector
``hs[s] . U[:, k, :] . he[e] + W[k] . (hs[s] ++ he[e]) + b[k]`` where ``hs``
and ``he`` come from two FFNNs over the shared encoder output. Category 0
is the non-entity class.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from . import neural_core as nc
from .encoder import Batch, EncoderConfig, Vocab, encode, encode_backward, init_encoder, make_batch
from .metrics import corpus_f1
from .span_codec import OverlapPolicy, TokenSpan, token_spans_to_offsets
from .text_prep import prepare
from .training import EpochLog, Example, NumericError, PlateauSchedule, TrainResult, child_rng, make_examples

logger = logging.getLogger(__name__)

NON_ENTITY = 0
TOXIC = 1


@dataclass
class BiaffineConfig(EncoderConfig):
    word_dim: int = 300
    char_hidden: int = 25
    lstm_hidden: int = 200
    lstm_layers: int = 3
    lstm_dropout: float = 0.4
    emb_dropout: float = 0.5
    ffnn_size: int = 150
    ffnn_dropout: float = 0.2
    num_categories: int = 2  # toxic + non-entity
    max_width: Optional[int] = 16  # None = unbounded
    use_preprocessing: bool = True
    include_gaps: bool = True
    overlap: OverlapPolicy = OverlapPolicy.ANY
    seed: int = 0

    def __post_init__(self):
        self.overlap = OverlapPolicy(self.overlap)

    def validate(self):
        super().validate()
        if self.ffnn_size <= 0:
            raise ValueError("ffnn_size must be positive")
        if self.num_categories < 2:
            raise ValueError("num_categories counts the non-entity class and must be >= 2")
        if self.max_width is not None and self.max_width < 1:
            raise ValueError("max_width must be >= 1 or None")
        if not 0.0 <= self.ffnn_dropout < 1.0:
            raise ValueError("ffnn_dropout must be in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["overlap"] = self.overlap.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BiaffineConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class BiaffineSchedule:
    optimizer: str = "adam"
    lr: float = 1e-4
    batch_size: int = 32
    max_steps: int = 40_000
    eval_every: Optional[int] = None  # default: one pass over the training set
    patience: int = 5  # evaluations without dev improvement before stopping; 0 disables
    clip_norm: Optional[float] = 5.0
    negative_ratio: Optional[float] = None  # sample this many negatives per gold span; None = all
    target_f1: Optional[float] = None  # stop once dev F1 reaches this

    def validate(self):
        if self.batch_size < 1 or self.max_steps < 0 or self.lr <= 0:
            raise ValueError("batch_size >= 1, max_steps >= 0 and lr > 0 are required")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")


@dataclass
class SpanScoreTensor:
    n: int
    c: int
    scores: Dict[Tuple[int, int], np.ndarray]

    @classmethod
    def from_dense(cls, S: np.ndarray, n: int, max_width: Optional[int]) -> "SpanScoreTensor":
        """Pick the valid (s <= e, width-capped) cells out of an (n, n, c) array."""
        scores = {}
        for s in range(n):
            hi = n if max_width is None else min(n, s + max_width)
            for e in range(s, hi):
                scores[(s, e)] = S[s, e].copy()
        return cls(n, S.shape[-1], scores)


@dataclass(frozen=True)
class RankedSpan:
    span: TokenSpan
    category: int
    score: float


def span_mask(n: int, T: int, max_width: Optional[int]) -> np.ndarray:
    """(T, T) boolean mask of valid spans for a length-``n`` sentence padded to ``T``."""
    s = np.arange(T)[:, None]
    e = np.arange(T)[None, :]
    m = (s <= e) & (e < n)
    if max_width is not None:
        m &= (e - s) < max_width
    return m


def decode(sst: SpanScoreTensor) -> List[RankedSpan]:
    """Rank non-entity-free candidates by winning score, keep those that do not clash."""
    cands = []
    for (s, e), vec in sst.scores.items():
        k = int(np.argmax(vec))
        if k != NON_ENTITY:
            cands.append(RankedSpan(TokenSpan(s, e), k, float(vec[k])))
    cands.sort(key=lambda r: (-r.score, r.span.s, r.span.e - r.span.s))
    taken = np.zeros(sst.n, dtype=bool)
    chosen = []
    for r in cands:
        # selected spans are disjoint, so overlap/containment both reduce to a shared token
        if not taken[r.span.s : r.span.e + 1].any():
            taken[r.span.s : r.span.e + 1] = True
            chosen.append(r)
    return chosen


def span_loss_and_grad(
    sst_scores: np.ndarray,
    n: int,
    gold: Sequence[TokenSpan],
    max_width: Optional[int],
    negative_ratio: Optional[float] = None,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[float, np.ndarray, int]:
    """Mean softmax cross-entropy over the valid spans of one sentence.

    ``sst_scores`` is the dense (T, T, c) score array. Returns the loss,
    its gradient with the same shape, and the number of gold spans that
    were excluded because they are wider than ``max_width``. With
    ``negative_ratio`` and an ``rng``, only that many non-entity spans per
    gold span (at least one) are sampled into the loss.
    """
    T = sst_scores.shape[0]
    mask = span_mask(n, T, max_width)
    labels = np.zeros((T, T), dtype=np.int64)
    skipped = 0
    for sp in gold:
        if sp.e >= n:
            raise ValueError(f"gold span {sp} outside sentence of length {n}")
        if max_width is not None and len(sp) > max_width:
            skipped += 1
            continue
        labels[sp.s, sp.e] = TOXIC
    if negative_ratio is not None and rng is not None:
        neg = np.flatnonzero(mask & (labels == NON_ENTITY))
        k = min(len(neg), max(1, int(round(negative_ratio * max(1, len(gold))))))
        drop = np.setdiff1d(neg, rng.choice(neg, size=k, replace=False))
        mask.reshape(-1)[drop] = False
    count = int(mask.sum())
    logp = nc.log_softmax(sst_scores, axis=-1)
    picked = np.take_along_axis(logp, labels[:, :, None], axis=-1)[:, :, 0]
    loss = -float(picked[mask].sum()) / count
    grad = np.exp(logp)
    np.put_along_axis(grad, labels[:, :, None], np.take_along_axis(grad, labels[:, :, None], -1) - 1.0, axis=-1)
    grad *= mask[:, :, None] / count
    return loss, grad, skipped


class BiaffineModel:
    arch = "biaffine"

    def __init__(self, config: BiaffineConfig, words: Vocab, chars: Vocab, params: Optional[nc.ModelParams] = None):
        config.validate()
        self.config = config
        self.words = words
        self.chars = chars
        self.params = params if params is not None else self._init_params()

    @classmethod
    def build(cls, config: BiaffineConfig, texts: Sequence[str]) -> "BiaffineModel":
        sents = [[t.surface for t in prepare(x, config.use_preprocessing)] for x in texts]
        words = Vocab.build(sents)
        chars = Vocab.build(w for s in sents for w in s)
        return cls(config, words, chars)

    def _init_params(self) -> nc.ModelParams:
        cfg = self.config
        rng = child_rng(cfg.seed, 0)
        params = nc.ModelParams()
        init_encoder(params, cfg, len(self.words), len(self.chars), rng)
        D, p, c = cfg.output_dim, cfg.ffnn_size, cfg.num_categories
        nc.add_ffnn(params, "ffnn_s", D, p, p, rng)
        nc.add_ffnn(params, "ffnn_e", D, p, p, rng)
        params.add("biaffine.U", rng.uniform(-1, 1, size=(p, c, p)) / p)
        params.add("biaffine.W", nc.xavier_init(rng, 2 * p, c).T)
        params.add("biaffine.b", np.zeros(c))
        return params

    def expected_shapes(self) -> Dict[str, tuple]:
        return {k: v.shape for k, v in self._init_params().values.items()}

    def make_batch(self, sentences) -> Batch:
        return make_batch(sentences, self.words, self.chars, self.config.max_word_chars)

    def forward(self, batch: Batch, rng=None):
        """Dense scores (B, T, T, c); cells outside :func:`span_mask` are meaningless."""
        p = self.params
        cfg = self.config
        reps, enc_cache = encode(p, cfg, batch, rng)
        shape = reps.shape[:2] + (cfg.ffnn_size,)
        ms = nc.dropout_mask(rng, shape, cfg.ffnn_dropout)
        me = nc.dropout_mask(rng, shape, cfg.ffnn_dropout)
        Hs, cs = nc.ffnn_forward(reps, p, "ffnn_s", "relu", ms)
        He, ce = nc.ffnn_forward(reps, p, "ffnn_e", "relu", me)
        S, bc = nc.biaffine_forward(Hs, He, p["biaffine.U"], p["biaffine.W"], p["biaffine.b"])
        return S, (enc_cache, cs, ce, bc)

    def score_all_spans(self, tokens: Sequence[str]) -> SpanScoreTensor:
        batch = self.make_batch([list(tokens)])
        S, _ = self.forward(batch)
        return SpanScoreTensor.from_dense(S[0], len(tokens), self.config.max_width)

    def loss_and_grad(
        self, sentences, gold: Sequence[Sequence[TokenSpan]], rng=None, negative_ratio: Optional[float] = None
    ) -> float:
        p = self.params
        p.zero_grad()
        batch = self.make_batch(sentences)
        S, (enc_cache, cs, ce, bc) = self.forward(batch, rng)
        B = len(sentences)
        dS = np.zeros_like(S)
        total = 0.0
        for b in range(B):
            n = int(batch.lengths[b])
            loss, g, skipped = span_loss_and_grad(S[b], n, gold[b], self.config.max_width, negative_ratio, rng)
            if skipped:
                logger.warning("%d gold span(s) wider than max_width=%s left out of the loss", skipped, self.config.max_width)
            total += loss
            dS[b] = g / B
        dHs, dHe, dU, dW, db = nc.biaffine_backward(dS, bc, p["biaffine.U"], p["biaffine.W"])
        p.grads["biaffine.U"] += dU
        p.grads["biaffine.W"] += dW
        p.grads["biaffine.b"] += db
        d_reps = nc.ffnn_backward(dHs, cs, p) + nc.ffnn_backward(dHe, ce, p)
        encode_backward(d_reps, enc_cache, p)
        return total / B

    def loss_fn(self, sentences, gold) -> Callable[[], Tuple[float, Dict[str, np.ndarray]]]:
        def fn():
            loss = self.loss_and_grad(sentences, gold, rng=None)
            return loss, self.params.grads
        return fn

    def decode_spans(self, sentences: Sequence[Sequence[str]]) -> List[List[RankedSpan]]:
        if not sentences:
            return []
        batch = self.make_batch(sentences)
        S, _ = self.forward(batch)
        return [
            decode(SpanScoreTensor.from_dense(S[b], int(batch.lengths[b]), self.config.max_width))
            for b in range(len(sentences))
        ]

    def predict_posts(self, texts: Sequence[str], batch_size: int = 64) -> List[Set[int]]:
        token_lists = [prepare(t, self.config.use_preprocessing) for t in texts]
        preds: List[Set[int]] = [set() for _ in texts]
        todo = [i for i, toks in enumerate(token_lists) if toks]
        for start in range(0, len(todo), batch_size):
            chunk = todo[start : start + batch_size]
            decoded = self.decode_spans([[t.surface for t in token_lists[i]] for i in chunk])
            for i, ranked in zip(chunk, decoded):
                spans = sorted(r.span for r in ranked)
                preds[i] = token_spans_to_offsets(spans, token_lists[i], self.config.include_gaps)
        return preds

    def predict_post(self, text: str) -> Set[int]:
        return self.predict_posts([text])[0]

    def evaluate(self, examples: Sequence[Example]) -> float:
        preds = self.predict_posts([ex.text for ex in examples])
        return corpus_f1([(p, ex.gold) for p, ex in zip(preds, examples)])


def train_biaffine(
    model: BiaffineModel,
    train_records,
    dev_records,
    schedule: BiaffineSchedule,
    on_eval: Optional[Callable[[EpochLog], None]] = None,
) -> TrainResult:
    """Step-based training; dev F1 is computed every ``eval_every`` steps.

    Stops at ``max_steps`` or after ``patience`` evaluations without a dev
    improvement. Leaves the best parameters in the model.
    """
    schedule.validate()
    cfg = model.config
    train_ex = [ex for ex in make_examples(train_records, cfg.use_preprocessing, cfg.overlap) if ex.tokens]
    if not train_ex:
        raise ValueError("training set has no non-empty posts")
    dev_ex = make_examples(dev_records, cfg.use_preprocessing, cfg.overlap)
    rng = child_rng(cfg.seed, 1)
    eval_every = schedule.eval_every or max(1, math.ceil(len(train_ex) / schedule.batch_size))
    optimizer = nc.make_optimizer(schedule.optimizer, schedule.lr)
    # patience only matters for stopping; the LR stays fixed
    plateau = PlateauSchedule(schedule.lr, schedule.lr, 1, max(schedule.patience, 1))
    best_params = model.params.copy()
    plateau.update(model.evaluate(dev_ex) if dev_ex else 0.0)
    result = TrainResult(best_params, best_dev_f1=plateau.best)

    order = np.array([], dtype=np.int64)
    cursor = 0
    step = 0
    window_loss, window_n = 0.0, 0
    while step < schedule.max_steps:
        if cursor >= len(order):
            order = rng.permutation(len(train_ex))
            cursor = 0
        idx = order[cursor : cursor + schedule.batch_size]
        cursor += schedule.batch_size
        sents = [train_ex[i].surfaces for i in idx]
        gold = [train_ex[i].spans for i in idx]
        loss = model.loss_and_grad(sents, gold, rng, schedule.negative_ratio)
        step += 1
        if not math.isfinite(loss) or not math.isfinite(model.params.grad_norm()):
            model.params.load_values(best_params)
            raise NumericError(f"non-finite loss at step {step}", best_params, result.log)
        nc.clip_grad_norm(model.params, schedule.clip_norm)
        optimizer.step(model.params)
        window_loss += loss * len(idx)
        window_n += len(idx)
        if step % eval_every == 0 or step == schedule.max_steps:
            dev_f1 = model.evaluate(dev_ex) if dev_ex else 0.0
            entry = EpochLog(len(result.log) + 1, window_loss / window_n, dev_f1, schedule.lr, step)
            result.log.append(entry)
            window_loss, window_n = 0.0, 0
            logger.info("step %d loss %.4f dev F1 %.4f", step, entry.loss, dev_f1)
            if on_eval:
                on_eval(entry)
            if plateau.update(dev_f1):
                best_params = model.params.copy()
            if schedule.patience and plateau.should_stop:
                break
            if schedule.target_f1 is not None and dev_f1 >= schedule.target_f1:
                break
    model.params.load_values(best_params)
    result.params = model.params
    result.best_dev_f1 = plateau.best
    result.steps = step
    return result
