"""Task CSV files and JSON checkpoints on disk, plus the seeded synthetic corpus generator."""
from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import neural_core as nc
from .biaffine import BiaffineConfig, BiaffineModel
from .encoder import Vocab
from .tagger import Tagger, TaggerConfig
from .training import DataError, child_rng

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

_SPANS_RE = re.compile(r"^\[\s*(?:\d+\s*(?:,\s*\d+\s*)*)?\]$")


@dataclass
class TsdRecord:
    spans: List[int]
    text: str

    def __post_init__(self):
        self.spans = sorted(set(int(s) for s in self.spans))


@dataclass
class ReadReport:
    records: List[TsdRecord] = field(default_factory=list)
    skipped: int = 0
    errors: List[str] = field(default_factory=list)


def parse_spans(literal: str) -> List[int]:
    """'[3, 4, 5]' -> [3, 4, 5]; '[]' -> []."""
    literal = literal.strip()
    if not _SPANS_RE.match(literal):
        raise ValueError(f"malformed span literal {literal[:40]!r}")
    body = literal[1:-1].strip()
    return [int(x) for x in body.split(",")] if body else []


def format_spans(spans: Iterable[int]) -> str:
    return "[" + ", ".join(str(s) for s in sorted(set(spans))) + "]"


def read_tsd_csv_report(path, strict: bool = True) -> ReadReport:
    report = ReadReport()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"spans", "text"} <= set(reader.fieldnames):
            raise DataError(f"{path}: header must contain 'spans' and 'text' columns")
        line = reader.line_num
        for row in reader:
            try:
                spans = parse_spans(row["spans"] or "")
                text = row["text"] if row["text"] is not None else ""
                bad = [s for s in spans if s >= len(text)]
                if bad:
                    raise ValueError(f"span index {bad[0]} out of range for text of length {len(text)}")
                report.records.append(TsdRecord(spans, text))
            except ValueError as exc:
                msg = f"{path}: record starting at line {line + 1}: {exc}"
                if strict:
                    raise DataError(msg) from exc
                report.errors.append(msg)
                report.skipped += 1
            line = reader.line_num
    if report.skipped:
        logger.warning("%s: skipped %d malformed record(s)", path, report.skipped)
    return report


def read_tsd_csv(path, strict: bool = True) -> List[TsdRecord]:
    return read_tsd_csv_report(path, strict).records


def write_predictions(records: Sequence, predictions: Sequence[Iterable[int]], path) -> None:
    """Write ``spans,text`` rows using the same span-literal convention as the input."""
    if len(records) != len(predictions):
        raise ValueError("need exactly one prediction per record")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["spans", "text"])
        for rec, pred in zip(records, predictions):
            writer.writerow([format_spans(pred), rec.text])


# ---------------------------------------------------------------- checkpoints

Model = Union[Tagger, BiaffineModel]


def checkpoint_dict(model: Model) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "arch": model.arch,
        "config": model.config.to_dict(),
        "vocab": {"words": model.words.itos, "chars": model.chars.itos},
        "params": {
            name: {"shape": list(model.params[name].shape), "values": model.params[name].reshape(-1).tolist()}
            for name in model.params.names()
        },
    }


def save_checkpoint(model: Model, path) -> None:
    # json writes floats with repr(), the shortest string that round-trips exactly
    text = json.dumps(checkpoint_dict(model), sort_keys=True, indent=1, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_checkpoint(path) -> Model:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: unreadable checkpoint ({exc})") from exc
    if not isinstance(data, dict):
        raise DataError(f"{path}: checkpoint must be a JSON object")
    version = data.get("format_version")
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint format_version {version!r}")
    try:
        arch = data["arch"]
        words = Vocab.from_list(data["vocab"]["words"])
        chars = Vocab.from_list(data["vocab"]["chars"])
        if arch == "tagger":
            model = Tagger(TaggerConfig.from_dict(data["config"]), words, chars)
        elif arch == "biaffine":
            model = BiaffineModel(BiaffineConfig.from_dict(data["config"]), words, chars)
        else:
            raise DataError(f"{path}: unknown architecture {arch!r}")
        stored = data["params"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: corrupt checkpoint ({exc})") from exc
    expected = model.params.names()
    missing = sorted(set(expected) - set(stored))
    extra = sorted(set(stored) - set(expected))
    if missing or extra:
        raise DataError(f"{path}: parameter set mismatch (missing {missing}, unexpected {extra})")
    for name in expected:
        entry = stored[name]
        shape = tuple(entry.get("shape", ()))
        if shape != model.params[name].shape:
            raise DataError(
                f"{path}: parameter {name!r} has shape {shape}, config implies {model.params[name].shape}"
            )
        values = np.asarray(entry["values"], dtype=nc.DTYPE)
        if values.size != model.params[name].size:
            raise DataError(f"{path}: parameter {name!r} has {values.size} values for shape {shape}")
        if not np.all(np.isfinite(values)):
            raise DataError(f"{path}: parameter {name!r} has non-finite values")
        model.params.values[name][...] = values.reshape(shape)
    return model


# ---------------------------------------------------------------- synthetic corpora

# Span-length proportions of the task's training split (1 word, 2-4, >=5).
TASK_SPAN_MIX = (7897 / 10298, 1617 / 10298, 784 / 10298)

SYNTH_LEXICON = (
    "stupid", "idiot", "moron", "dumb", "fool", "loser", "pathetic", "ugly",
    "jerk", "clown", "garbage", "trash", "scum", "coward", "liar",
)

_ONSETS = "b c d f g h k l m n p r s t v z br tr pl gr st".split()
_VOWELS = "a e i o u ai ou".split()
_PUNCT = ",.!?"


def _pseudo_words(rng, count: int, exclude: Iterable[str]) -> List[str]:
    seen = set(exclude)
    out = []
    while len(out) < count:
        k = int(rng.integers(2, 4))
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(k))
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


def gen_synthetic(
    seed: int,
    n_posts: int,
    vocab_size: int = 200,
    lexicon: Sequence[str] = SYNTH_LEXICON,
    span_length_mix: Tuple[float, float, float] = TASK_SPAN_MIX,
    mode: str = "planted",
    empty_rate: float = 0.05,
    punct_rate: float = 0.15,
    vocab_seed: Optional[int] = None,
) -> List[TsdRecord]:
    """Seeded template posts with planted toxic spans.

    Single-word spans are lexicon words. Longer spans (2-4 or 5-8 words,
    chosen by ``span_length_mix``) are phrases whose words come from a
    reserved toxic pool in ``"planted"`` mode, so every span is recoverable
    from the words alone; in ``"contextual"`` mode they are ordinary
    vocabulary words that are toxic only where planted: a cue word just
    before the phrase marks its start, while its end carries no signal.

    The vocabulary depends only on ``vocab_seed`` (default: ``seed``) and
    ``vocab_size``; give train and dev splits the same ``vocab_seed`` and
    different ``seed`` values.
    """
    if not lexicon:
        raise ValueError("lexicon must be nonempty")
    if mode not in ("planted", "contextual"):
        raise ValueError(f"unknown mode {mode!r}")
    mix = np.asarray(span_length_mix, dtype=float)
    if mix.shape != (3,) or np.any(mix < 0) or mix.sum() <= 0:
        raise ValueError("span_length_mix needs three nonnegative weights")
    mix = mix / mix.sum()
    lexicon = [w.lower() for w in lexicon]

    vocab_rng = child_rng(seed if vocab_seed is None else vocab_seed, 0)
    pool_size = max(8, vocab_size // 5) if mode == "planted" else 0
    words = _pseudo_words(vocab_rng, max(vocab_size - pool_size, 8) + pool_size, lexicon)
    toxic_pool, neutral = words[:pool_size], words[pool_size:]
    contextual = mode == "contextual"
    # in contextual mode a cue word announces each phrase; where the phrase ends
    # is visible only from the (unmarked) change back to filler
    cues = neutral[:3] if contextual else []
    neutral = neutral[3:] if contextual else neutral
    phrase_words = toxic_pool if mode == "planted" else neutral

    lead, gap_mid, trail = ((2, 11), (2, 9), (2, 11)) if contextual else ((1, 6), (1, 5), (0, 5))

    def filler(lo_hi):
        return [neutral[i] for i in rng.integers(len(neutral), size=int(rng.integers(*lo_hi)))]

    rng = child_rng(seed, 1)
    records = []
    for _ in range(n_posts):
        n_spans = 0 if rng.random() < empty_rate else int(rng.choice([1, 2, 3], p=[0.6, 0.3, 0.1]))
        pieces: List[Tuple[List[str], bool]] = [(filler(lead), False)]
        for k in range(n_spans):
            bucket = int(rng.choice(3, p=mix))
            if bucket == 0:
                span = [lexicon[rng.integers(len(lexicon))]]
            else:
                length = int(rng.integers(2, 5)) if bucket == 1 else int(rng.integers(5, 9))
                span = [phrase_words[i] for i in rng.integers(len(phrase_words), size=length)]
            if cues and bucket > 0:
                pieces.append(([cues[rng.integers(len(cues))]], False))
            pieces.append((span, True))
            gap = filler(gap_mid if k < n_spans - 1 else trail)
            if gap:
                pieces.append((gap, False))
        text_parts: List[str] = []
        gold: List[int] = []
        pos = 0
        for piece_words, toxic in pieces:
            span_start = None
            for j, w in enumerate(piece_words):
                if text_parts:
                    text_parts.append(" ")
                    pos += 1
                if span_start is None:
                    span_start = pos
                text_parts.append(w)
                pos += len(w)
                if toxic and j == len(piece_words) - 1:
                    # the span runs from its first to its last word, inner spaces included
                    gold.extend(range(span_start, pos))
                interior = toxic and j < len(piece_words) - 1
                if (contextual or not interior) and rng.random() < punct_rate:
                    text_parts.append(_PUNCT[rng.integers(len(_PUNCT))])
                    pos += 1
        records.append(TsdRecord(gold, "".join(text_parts)))
    return records
