import json

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from toxic_spans.biaffine import BiaffineConfig, BiaffineModel
from toxic_spans.dataio import (
    SYNTH_LEXICON,
    TsdRecord,
    format_spans,
    gen_synthetic,
    load_checkpoint,
    parse_spans,
    read_tsd_csv,
    read_tsd_csv_report,
    save_checkpoint,
    write_predictions,
)
from toxic_spans.metrics import post_f1, span_length_counts
from toxic_spans.span_codec import offsets_to_token_spans, token_spans_to_offsets
from toxic_spans.tagger import Tagger, TaggerConfig
from toxic_spans.text_prep import prepare
from toxic_spans.training import DataError

from conftest import SMALL_DIMS


def test_parse_and_format_spans():
    assert parse_spans("[]") == []
    assert parse_spans("[3,4]") == [3, 4]
    assert parse_spans(" [3, 4, 10] ") == [3, 4, 10]
    assert format_spans([4, 3, 3]) == "[3, 4]"
    for bad in ("3, 4", "[3,,4]", "[a]", "[-1]", "[1.5]"):
        with pytest.raises(ValueError):
            parse_spans(bad)


def test_read_strict_and_lenient(tmp_path):
    p = tmp_path / "in.csv"
    p.write_text('spans,text\n"[0, 1]",ab\n"[9]",short\n"[x]",bad\n[],"multi\nline, text"\n', encoding="utf-8")
    with pytest.raises(DataError, match="line 3"):
        read_tsd_csv(p)
    rep = read_tsd_csv_report(p, strict=False)
    assert rep.skipped == 2 and len(rep.errors) == 2
    assert [r.text for r in rep.records] == ["ab", "multi\nline, text"]


def test_missing_header_is_a_data_error(tmp_path):
    p = tmp_path / "in.csv"
    p.write_text("a,b\n1,2\n", encoding="utf-8")
    with pytest.raises(DataError):
        read_tsd_csv(p)


def test_header_only_file(tmp_path):
    p = tmp_path / "in.csv"
    p.write_text("spans,text\n", encoding="utf-8")
    assert read_tsd_csv(p) == []


@settings(max_examples=60, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.lists(st.text(alphabet=st.characters(blacklist_categories=("Cs",), blacklist_characters="\r\x00"), max_size=30), max_size=6), st.data())
def test_csv_round_trip(tmp_path, texts, data):
    records = []
    for t in texts:
        spans = data.draw(st.sets(st.integers(0, max(len(t) - 1, 0)))) if t else set()
        records.append(TsdRecord(sorted(spans), t))
    p = tmp_path / "rt.csv"
    write_predictions(records, [r.spans for r in records], p)
    back = read_tsd_csv(p)
    assert back == records


def test_write_predictions_needs_alignment(tmp_path):
    with pytest.raises(ValueError):
        write_predictions([TsdRecord([], "a")], [], tmp_path / "x.csv")


@pytest.mark.parametrize("arch", ["tagger", "biaffine"])
def test_checkpoint_round_trip_is_exact(tmp_path, arch):
    texts = ["you are a fool", "nice day"]
    if arch == "tagger":
        m = Tagger.build(TaggerConfig(**SMALL_DIMS, seed=3), texts)
    else:
        m = BiaffineModel.build(BiaffineConfig(**SMALL_DIMS, lstm_layers=1, ffnn_size=4, seed=3), texts)
    rng = np.random.default_rng(0)
    for name in m.params.names():
        m.params.values[name] += rng.normal(size=m.params[name].shape) / 3
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    save_checkpoint(m, a)
    m2 = load_checkpoint(a)
    save_checkpoint(m2, b)
    assert a.read_bytes() == b.read_bytes()
    for name in m.params.names():
        assert np.array_equal(m.params[name], m2.params[name])
    assert m2.predict_posts(texts + ["unseen words"]) == m.predict_posts(texts + ["unseen words"])


def test_tampered_checkpoints_name_the_parameter(tmp_path):
    m = Tagger.build(TaggerConfig(**SMALL_DIMS), ["a b"])
    p = tmp_path / "m.json"
    save_checkpoint(m, p)
    data = json.loads(p.read_text())
    data["params"]["out.W"]["shape"] = [3, 3]
    p.write_text(json.dumps(data))
    with pytest.raises(DataError, match="out.W"):
        load_checkpoint(p)
    data["format_version"] = 99
    p.write_text(json.dumps(data))
    with pytest.raises(DataError, match="format_version"):
        load_checkpoint(p)
    p.write_text("not json")
    with pytest.raises(DataError):
        load_checkpoint(p)


def test_synthetic_is_deterministic_and_consistent():
    a = gen_synthetic(3, 300)
    assert a == gen_synthetic(3, 300)
    assert a != gen_synthetic(4, 300)
    counts = {"1": 0, "2-4": 0, ">=5": 0}
    for r in a:
        toks = prepare(r.text)
        spans = offsets_to_token_spans(r.spans, toks)
        # gold covers whole tokens plus the single spaces between them
        covered = set()
        for sp in spans:
            covered |= set(range(toks[sp.s].orig_start, toks[sp.e].orig_end + 1))
        assert covered == set(r.spans)
        for sp in spans:
            if len(sp) == 1:
                assert toks[sp.s].surface in SYNTH_LEXICON
    counts = span_length_counts((r.spans, prepare(r.text)) for r in gen_synthetic(0, 3000))
    total = sum(counts.values())
    assert abs(counts["1"] / total - 0.767) < 0.03
    assert abs(counts[">=5"] / total - 0.076) < 0.02


def test_synthetic_vocab_sharing_and_modes():
    tr = gen_synthetic(1, 200, vocab_seed=9)
    dev = gen_synthetic(2, 200, vocab_seed=9)
    vocab = lambda rs: {t.surface for r in rs for t in prepare(r.text)}
    assert len(vocab(dev) - vocab(tr)) < 10
    ctx = gen_synthetic(1, 50, mode="contextual")
    assert ctx != gen_synthetic(1, 50)
    with pytest.raises(ValueError):
        gen_synthetic(1, 5, mode="other")
    with pytest.raises(ValueError):
        gen_synthetic(1, 5, span_length_mix=(1, 1))
    with pytest.raises(ValueError):
        gen_synthetic(1, 5, lexicon=())


def test_single_word_mix_plants_only_lexicon_words():
    for r in gen_synthetic(8, 200, span_length_mix=(1.0, 0.0, 0.0)):
        toks = prepare(r.text)
        for sp in offsets_to_token_spans(r.spans, toks):
            assert len(sp) == 1 and toks[sp.s].surface in SYNTH_LEXICON


def test_contextual_gold_round_trips_through_codec():
    for r in gen_synthetic(9, 300, mode="contextual"):
        toks = prepare(r.text)
        back = token_spans_to_offsets(offsets_to_token_spans(r.spans, toks), toks)
        assert post_f1(back, r.spans).f1 == 1.0
