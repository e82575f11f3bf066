import math

import numpy as np
import pytest

from toxic_spans.biaffine import (
    NON_ENTITY,
    TOXIC,
    BiaffineConfig,
    BiaffineModel,
    BiaffineSchedule,
    SpanScoreTensor,
    decode,
    span_loss_and_grad,
    span_mask,
    train_biaffine,
)
from toxic_spans.dataio import TsdRecord
from toxic_spans.neural_core import Adam, gradient_check
from toxic_spans.span_codec import TokenSpan
from toxic_spans.training import make_examples

from conftest import SMALL_DIMS


def small_config(**kw):
    base = dict(SMALL_DIMS, lstm_layers=1, ffnn_size=4, emb_dropout=0.0, lstm_dropout=0.0, ffnn_dropout=0.0)
    return BiaffineConfig(**{**base, **kw})


def sst_from(n, entries, c=2):
    """Tensor with every span non-entity except the given {(s, e): toxic_score}."""
    scores = {}
    for s in range(n):
        for e in range(s, n):
            v = np.zeros(c)
            v[NON_ENTITY] = 0.0
            v[TOXIC] = entries.get((s, e), -1.0)
            scores[(s, e)] = v
    return SpanScoreTensor(n, c, scores)


def random_sst(rng, n, c):
    scores = {(s, e): rng.normal(size=c) for s in range(n) for e in range(s, n)}
    if rng.random() < 0.3:  # inject ties
        keys = list(scores)
        for k in keys[: len(keys) // 2]:
            scores[k] = np.round(scores[k])
    return SpanScoreTensor(n, c, scores)


def clashes(a, b):
    return not (a.e < b.s or b.e < a.s)


def test_decode_examples():
    out = decode(sst_from(4, {(0, 1): 2.0, (1, 2): 3.0, (3, 3): 0.5}))
    assert [(r.span.s, r.span.e) for r in out] == [(1, 2), (3, 3)]
    # nested candidate loses to its higher-scoring parent
    out = decode(sst_from(5, {(0, 4): 5.0, (1, 2): 4.0}))
    assert [(r.span.s, r.span.e) for r in out] == [(0, 4)]
    assert decode(sst_from(3, {})) == []


def test_decode_ties_prefer_earlier_then_shorter():
    out = decode(sst_from(4, {(1, 2): 1.0, (0, 1): 1.0, (0, 0): 1.0}))
    assert [(r.span.s, r.span.e) for r in out] == [(0, 0), (1, 2)]


def test_decode_soundness_with_replay_oracle():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n, c = int(rng.integers(1, 9)), int(rng.integers(2, 4))
        sst = random_sst(rng, n, c)
        chosen = decode(sst)
        for i, a in enumerate(chosen):
            for b in chosen[i + 1 :]:
                assert not clashes(a.span, b.span)
        # replay: walk candidates in rank order; each rejection is caused by a
        # higher-ranked selected span, each acceptance by the absence of one
        cands = []
        for (s, e), v in sst.scores.items():
            k = int(np.argmax(v))
            if k != NON_ENTITY:
                cands.append(((-float(v[k]), s, e - s), TokenSpan(s, e), k))
        cands.sort(key=lambda t: t[0])
        chosen_set = {(r.span, r.category) for r in chosen}
        selected = []
        for key, span, k in cands:
            blockers = [sel for sel in selected if clashes(sel[1], span)]
            if (span, k) in chosen_set:
                assert not blockers
                selected.append((key, span))
            else:
                assert blockers and all(bk < key for bk, _ in blockers)
        assert len(selected) == len(chosen)


def test_decode_invariant_to_shared_score_shift():
    rng = np.random.default_rng(1)
    for _ in range(100):
        sst = random_sst(rng, 6, 3)
        shifted = SpanScoreTensor(sst.n, sst.c, {k: v + 3.25 for k, v in sst.scores.items()})
        assert [r.span for r in decode(sst)] == [r.span for r in decode(shifted)]


def test_span_mask():
    m = span_mask(3, 4, 2)
    assert m.sum() == 3 + 2
    assert m[0, 1] and not m[0, 2] and not m[1, 0] and not m[3, 3]
    assert span_mask(3, 3, None).sum() == 6


def test_uniform_scores_give_ln2_loss():
    loss, grad, skipped = span_loss_and_grad(np.zeros((4, 4, 2)), 3, [TokenSpan(0, 1)], None)
    assert loss == pytest.approx(math.log(2)) and skipped == 0
    assert np.all(grad[~span_mask(3, 4, None)] == 0)
    assert grad.sum() == pytest.approx(0.0)


def test_overwide_gold_spans_are_skipped():
    _, _, skipped = span_loss_and_grad(np.zeros((5, 5, 2)), 5, [TokenSpan(0, 4)], 3)
    assert skipped == 1
    with pytest.raises(ValueError):
        span_loss_and_grad(np.zeros((3, 3, 2)), 2, [TokenSpan(0, 2)], None)


def test_negative_sampling_restricts_the_loss(rng):
    S = rng.normal(size=(6, 6, 2))
    full, _, _ = span_loss_and_grad(S, 6, [TokenSpan(1, 2)], None)
    sampled, grad, _ = span_loss_and_grad(S, 6, [TokenSpan(1, 2)], None, 2.0, np.random.default_rng(0))
    # gold + 2 sampled negatives carry gradient
    assert np.count_nonzero(np.abs(grad).sum(-1)) == 3
    assert sampled != full


@pytest.mark.parametrize("use_lstm", [True, False])
@pytest.mark.parametrize("max_width", [None, 2])
def test_full_loss_gradients(use_lstm, max_width):
    cfg = small_config(use_lstm=use_lstm, lstm_layers=2, max_width=max_width, seed=2)
    recs = [TsdRecord(list(range(8, 14)), "you are stupid"), TsdRecord([0, 1], "so dumb ok")]
    m = BiaffineModel.build(cfg, [r.text for r in recs])
    rng = np.random.default_rng(5)
    for name in m.params.names():
        m.params.values[name] += rng.normal(0, 0.1, m.params[name].shape)
    exs = make_examples(recs)
    report = gradient_check(m.loss_fn([e.surfaces for e in exs], [e.spans for e in exs]), m.params,
                            max_entries=15, rng=np.random.default_rng(0))
    assert report.passed, report.summary()


def test_overfits_and_decodes_gold():
    rec = TsdRecord(list(range(4, 21)), "you very stupid idiot ok")
    m = BiaffineModel.build(small_config(seed=3), [rec.text])
    ex = make_examples([rec])[0]
    opt = Adam(0.05)
    for _ in range(200):
        loss = m.loss_and_grad([ex.surfaces], [ex.spans])
        opt.step(m.params)
    assert loss < 0.01
    assert [r.span for r in m.decode_spans([ex.surfaces])[0]] == ex.spans
    assert m.predict_post(rec.text) == set(rec.spans)
    assert m.predict_post("") == set()


def test_training_stops_exactly_at_max_steps(tiny_corpus):
    train_recs, dev_recs = tiny_corpus
    m = BiaffineModel.build(small_config(), [r.text for r in train_recs])
    res = train_biaffine(m, train_recs, dev_recs, BiaffineSchedule(lr=1e-3, batch_size=7, max_steps=11, eval_every=4, patience=0))
    assert res.steps == 11
    assert [e.steps for e in res.log] == [4, 8, 11]


def test_training_early_stops_on_patience(tiny_corpus):
    train_recs, dev_recs = tiny_corpus
    m = BiaffineModel.build(small_config(), [r.text for r in train_recs])
    # a learning rate this small cannot move dev F1
    res = train_biaffine(m, train_recs, dev_recs, BiaffineSchedule(lr=1e-12, batch_size=8, max_steps=1000, eval_every=1, patience=2))
    assert res.steps == 2


def test_config_round_trip_and_validation():
    cfg = small_config(max_width=None, seed=4)
    assert BiaffineConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        BiaffineModel.build(small_config(num_categories=1), ["x"])
    with pytest.raises(ValueError):
        BiaffineModel.build(small_config(max_width=0), ["x"])
