"""Character-offset F1 for toxic spans, plus span-length and lexicon breakdowns."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

from .span_codec import TokenSpan, offsets_to_token_spans
from .text_prep import Token

BUCKETS = ("1", "2-4", ">=5")

# Testing-only default; real analyses should pass a lexicon file.
DEFAULT_LEXICON = frozenset(
    {
        "stupid", "idiot", "idiots", "idiotic", "stupidity", "moron", "morons", "dumb",
        "fool", "fools", "loser", "pathetic", "jerk", "clown", "scum",
    }
)


@dataclass(frozen=True)
class PostEval:
    precision: float
    recall: float
    f1: float
    intersection_size: int
    pred_size: int
    gold_size: int


def post_f1(pred: Iterable[int], gold: Iterable[int]) -> PostEval:
    pred, gold = set(pred), set(gold)
    inter = len(pred & gold)
    if not gold:
        # nothing toxic: only an empty prediction is correct
        score = 1.0 if not pred else 0.0
        return PostEval(score, score, score, inter, len(pred), 0)
    if not pred:
        return PostEval(0.0, 0.0, 0.0, 0, 0, len(gold))
    p = inter / len(pred)
    r = inter / len(gold)
    f1 = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return PostEval(p, r, f1, inter, len(pred), len(gold))


def corpus_f1(posts: Sequence[Tuple[Iterable[int], Iterable[int]]], micro: bool = False) -> float:
    """Mean per-post F1 over (pred, gold) pairs, or pooled-count F1 with ``micro``."""
    posts = list(posts)
    if not posts:
        raise ValueError("corpus_f1 needs at least one post")
    if not micro:
        return sum(post_f1(p, g).f1 for p, g in posts) / len(posts)
    inter = pred_n = gold_n = 0
    for p, g in posts:
        e = post_f1(p, g)
        inter += e.intersection_size
        pred_n += e.pred_size
        gold_n += e.gold_size
    if pred_n + gold_n == 0:
        return 1.0
    return 2 * inter / (pred_n + gold_n)


def bucket_of(length: int) -> str:
    if length <= 1:
        return "1"
    if length <= 4:
        return "2-4"
    return ">=5"


class BucketMode(str, enum.Enum):
    POST = "post"  # each post goes to the bucket of its longest gold span
    SPAN = "span"  # each gold span is its own evaluation unit


@dataclass
class BucketResult:
    f1: Dict[str, Optional[float]]
    counts: Dict[str, int]
    excluded_empty: int = 0

    @property
    def total(self) -> int:
        return sum(self.counts.values())


@dataclass
class AnalysisReport:
    corpus_f1: float
    buckets: Optional[BucketResult] = None
    span_counts: Dict[str, int] = field(default_factory=dict)
    lexicon_f1: Optional[Tuple[Optional[float], Optional[float]]] = None
    lexicon_counts: Optional[Tuple[int, int]] = None

    def rows(self) -> List[Tuple[str, str, str]]:
        """Flat (section, key, value) rows for CSV output."""
        def fmt(v):
            return "" if v is None else f"{v:.6f}"

        rows = [("corpus", "f1", fmt(self.corpus_f1))]
        if self.buckets is not None:
            for b in BUCKETS:
                rows.append(("bucket_f1", b, fmt(self.buckets.f1[b])))
            for b in BUCKETS:
                rows.append(("bucket_count", b, str(self.buckets.counts[b])))
            rows.append(("bucket_count", "excluded_empty_gold", str(self.buckets.excluded_empty)))
        for b in BUCKETS:
            if self.span_counts:
                rows.append(("span_count", b, str(self.span_counts.get(b, 0))))
        if self.lexicon_f1 is not None:
            rows.append(("lexicon_f1", "lexicon", fmt(self.lexicon_f1[0])))
            rows.append(("lexicon_f1", "other", fmt(self.lexicon_f1[1])))
            rows.append(("lexicon_count", "lexicon", str(self.lexicon_counts[0])))
            rows.append(("lexicon_count", "other", str(self.lexicon_counts[1])))
        return rows

    def table(self) -> str:
        lines = [f"corpus F1: {self.corpus_f1:.4f}"]
        if self.buckets is not None:
            lines.append("span length  posts      F1")
            for b in BUCKETS:
                f = self.buckets.f1[b]
                lines.append(f"{b:>11}  {self.buckets.counts[b]:5d}  {'-' if f is None else f'{f:.4f}':>6}")
            lines.append(f"{'total':>11}  {self.buckets.total:5d}")
            lines.append(f"(empty-gold posts excluded: {self.buckets.excluded_empty})")
        if self.lexicon_f1 is not None:
            a, b = self.lexicon_f1
            na, nb = self.lexicon_counts
            lines.append("single-word lexicon spans vs others")
            lines.append(f"  lexicon ({na} posts): {'-' if a is None else f'{a:.4f}'}")
            lines.append(f"  other   ({nb} posts): {'-' if b is None else f'{b:.4f}'}")
        return "\n".join(lines)


def _mean_or_none(pairs):
    return corpus_f1(pairs) if pairs else None


def _expand(indices: Set[int], seed: Set[int]) -> Set[int]:
    """Connected runs of ``indices`` that touch ``seed``."""
    out = set()
    for i in seed & indices:
        if i in out:
            continue
        j = i
        while j in indices:
            out.add(j)
            j -= 1
        j = i + 1
        while j in indices:
            out.add(j)
            j += 1
    return out


def bucketed_f1(
    posts: Sequence[Tuple[Iterable[int], Iterable[int], Sequence[Token]]],
    mode: BucketMode = BucketMode.POST,
) -> BucketResult:
    """F1 per span-length bucket over (pred, gold, tokens) triples.

    In POST mode a post is scored whole, in the bucket of its longest gold
    span. In SPAN mode every gold span is a unit: its gold characters against
    the predicted runs that overlap its character range.
    """
    groups: Dict[str, list] = {b: [] for b in BUCKETS}
    empty = 0
    for pred, gold, tokens in posts:
        pred, gold = set(pred), set(gold)
        spans = offsets_to_token_spans(gold, tokens)
        if not spans:
            empty += 1
            continue
        if mode is BucketMode.POST:
            longest = max(len(sp) for sp in spans)
            groups[bucket_of(longest)].append((pred, gold))
            continue
        for sp in spans:
            lo, hi = tokens[sp.s].orig_start, tokens[sp.e].orig_end
            region = set(range(lo, hi + 1))
            unit_gold = gold & region
            unit_pred = _expand(pred, region)
            groups[bucket_of(len(sp))].append((unit_pred, unit_gold))
    return BucketResult(
        {b: _mean_or_none(groups[b]) for b in BUCKETS},
        {b: len(groups[b]) for b in BUCKETS},
        empty,
    )


def span_length_counts(golds_and_tokens: Iterable[Tuple[Iterable[int], Sequence[Token]]]) -> Dict[str, int]:
    """Number of contiguous gold spans per word-length bucket."""
    counts = {b: 0 for b in BUCKETS}
    for gold, tokens in golds_and_tokens:
        for sp in offsets_to_token_spans(set(gold), tokens):
            counts[bucket_of(len(sp))] += 1
    return counts


def lexicon_split_f1(
    posts: Sequence[Tuple[Iterable[int], Iterable[int], Sequence[Token]]],
    lexicon: Iterable[str],
) -> Tuple[Optional[float], Optional[float], int, int]:
    """(F1 of single-lexicon-word posts, F1 of other nonempty-gold posts, counts)."""
    lexicon = {w.lower() for w in lexicon}
    if not lexicon:
        raise ValueError("lexicon must be nonempty")
    in_lex, other = [], []
    for pred, gold, tokens in posts:
        gold = set(gold)
        spans = offsets_to_token_spans(gold, tokens)
        if not spans:
            continue
        if len(spans) == 1 and len(spans[0]) == 1 and tokens[spans[0].s].surface.lower() in lexicon:
            in_lex.append((pred, gold))
        else:
            other.append((pred, gold))
    return _mean_or_none(in_lex), _mean_or_none(other), len(in_lex), len(other)


def load_lexicon(path) -> frozenset:
    """One word per line, UTF-8; blank lines and '#' comments are skipped."""
    words = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            words.add(line.lower())
    if not words:
        raise ValueError(f"lexicon file {path} has no entries")
    return frozenset(words)
