"""Conversions between character offsets, token spans and IO/BIO tag sequences."""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Set

from .text_prep import Token

logger = logging.getLogger(__name__)


class TagScheme(str, enum.Enum):
    IO = "io"
    BIO = "bio"

    @property
    def tags(self) -> tuple:
        # O is always index 0
        return ("O", "I") if self is TagScheme.IO else ("O", "B", "I")

    @property
    def size(self) -> int:
        return len(self.tags)

    def index(self, tag: str) -> int:
        return self.tags.index(tag)


class OverlapPolicy(str, enum.Enum):
    ANY = "any"
    MAJORITY = "majority"


@dataclass(frozen=True, order=True)
class TokenSpan:
    s: int
    e: int  # inclusive

    def __post_init__(self):
        if not 0 <= self.s <= self.e:
            raise ValueError(f"invalid token span ({self.s}, {self.e})")

    def __len__(self):
        return self.e - self.s + 1


@dataclass(frozen=True)
class TagSequence:
    scheme: TagScheme
    tags: tuple

    def __post_init__(self):
        bad = [t for t in self.tags if t not in self.scheme.tags]
        if bad:
            raise ValueError(f"tags {bad} not valid under {self.scheme.name}")

    def __len__(self):
        return len(self.tags)

    def ids(self) -> List[int]:
        return [self.scheme.index(t) for t in self.tags]

    @classmethod
    def from_ids(cls, ids: Iterable[int], scheme: TagScheme) -> "TagSequence":
        return cls(scheme, tuple(scheme.tags[int(i)] for i in ids))


def _runs(flags: Sequence[bool]) -> List[TokenSpan]:
    spans = []
    start = None
    for i, f in enumerate(flags):
        if f and start is None:
            start = i
        elif not f and start is not None:
            spans.append(TokenSpan(start, i - 1))
            start = None
    if start is not None:
        spans.append(TokenSpan(start, len(flags) - 1))
    return spans


def offsets_to_token_spans(
    gold: Iterable[int],
    tokens: Sequence[Token],
    policy: OverlapPolicy = OverlapPolicy.ANY,
) -> List[TokenSpan]:
    gold = set(gold)
    if not tokens or not gold:
        return []
    last = tokens[-1].orig_end
    beyond = sorted(g for g in gold if g > last)
    if beyond:
        logger.warning("ignoring %d gold offsets beyond the last token (first: %d)", len(beyond), beyond[0])
    flags = []
    for tok in tokens:
        width = tok.orig_end - tok.orig_start + 1
        hits = sum(1 for k in range(tok.orig_start, tok.orig_end + 1) if k in gold)
        if policy is OverlapPolicy.ANY:
            flags.append(hits > 0)
        else:
            flags.append(2 * hits > width)
    return _runs(flags)


def token_spans_to_tags(spans: Sequence[TokenSpan], n: int, scheme: TagScheme) -> TagSequence:
    tags = ["O"] * n
    prev_end = -1
    for sp in spans:
        if sp.s <= prev_end:
            raise ValueError(f"spans must be sorted and disjoint; got {sp} after end {prev_end}")
        if sp.e >= n:
            raise ValueError(f"span {sp} exceeds sequence length {n}")
        for i in range(sp.s, sp.e + 1):
            tags[i] = "I"
        if scheme is TagScheme.BIO:
            tags[sp.s] = "B"
        prev_end = sp.e
    return TagSequence(scheme, tuple(tags))


def tags_to_token_spans(tags: TagSequence) -> List[TokenSpan]:
    """Decode tags into spans; under BIO an orphan I opens a new span."""
    if tags.scheme is TagScheme.IO:
        return _runs([t == "I" for t in tags.tags])
    spans = []
    start = None
    for i, t in enumerate(tags.tags):
        if t == "B" or (t == "I" and start is None):
            if start is not None:
                spans.append(TokenSpan(start, i - 1))
            start = i
        elif t == "O" and start is not None:
            spans.append(TokenSpan(start, i - 1))
            start = None
    if start is not None:
        spans.append(TokenSpan(start, len(tags) - 1))
    return spans


def token_spans_to_offsets(
    spans: Sequence[TokenSpan], tokens: Sequence[Token], include_gaps: bool = True
) -> Set[int]:
    out: Set[int] = set()
    for sp in spans:
        if include_gaps:
            out.update(range(tokens[sp.s].orig_start, tokens[sp.e].orig_end + 1))
        else:
            for tok in tokens[sp.s : sp.e + 1]:
                out.update(range(tok.orig_start, tok.orig_end + 1))
    return out


def repair(tags: TagSequence) -> TagSequence:
    """Canonical form: decode then re-encode (orphan I becomes B under BIO)."""
    return token_spans_to_tags(tags_to_token_spans(tags), len(tags), tags.scheme)
