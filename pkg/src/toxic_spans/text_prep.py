"""Offset-preserving text normalization and whitespace tokenization.

Normalization never deletes characters. Whitespace characters become a
single space each, and punctuation/symbol characters are pulled apart from
their neighbours by *inserted* spaces. Every character of the normalized
string records where it came from in the original post (``None`` for the
inserted spaces), so token-level decisions can be projected back onto the
original character offsets exactly.
"""
from __future__ import annotations

import unicodedata
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Set

APOSTROPHES = frozenset("'’")


@dataclass(frozen=True)
class RawPost:
    """A post and its gold toxic character offsets (sorted, unique)."""

    text: str
    gold: tuple = ()

    def __post_init__(self):
        gold = tuple(sorted(set(int(g) for g in self.gold)))
        for g in gold:
            if not 0 <= g < len(self.text):
                raise ValueError(f"gold offset {g} outside text of length {len(self.text)}")
        object.__setattr__(self, "gold", gold)


@dataclass(frozen=True)
class NormalizedText:
    text: str
    map: tuple  # per normalized char: original index, or None for an inserted space

    def __post_init__(self):
        if len(self.map) != len(self.text):
            raise ValueError("offset map length must equal text length")


@dataclass(frozen=True)
class Token:
    surface: str
    norm_start: int
    norm_end: int  # inclusive
    orig_start: int
    orig_end: int  # inclusive


def is_punct(ch: str) -> bool:
    """Unicode punctuation (P*) or symbol (S*) character."""
    return unicodedata.category(ch)[0] in ("P", "S")


def _is_abbrev_apostrophe(text: str, i: int) -> bool:
    return (
        text[i] in APOSTROPHES
        and 0 < i < len(text) - 1
        and text[i - 1].isalpha()
        and text[i + 1].isalpha()
    )


def normalize(text: str) -> NormalizedText:
    """Normalize ``text`` and keep a map back to original offsets.

    >>> normalize("idiot!").text
    'idiot !'
    >>> normalize("don't go").text
    "don 't go"
    """
    out: List[str] = []
    origin: List[Optional[int]] = []
    for i, ch in enumerate(text):
        if i > 0:
            prev = text[i - 1]
            if not prev.isspace() and not ch.isspace():
                # "don't" -> "don 't": break before the apostrophe, never after it
                after_abbrev = _is_abbrev_apostrophe(text, i - 1)
                if not after_abbrev and (is_punct(prev) or is_punct(ch)):
                    out.append(" ")
                    origin.append(None)
        out.append(" " if ch.isspace() else ch)
        origin.append(i)
    return NormalizedText("".join(out), tuple(origin))


def identity_text(text: str) -> NormalizedText:
    """Whitespace-only view of ``text`` with an identity map (preprocessing disabled)."""
    return NormalizedText(
        "".join(" " if ch.isspace() else ch for ch in text), tuple(range(len(text)))
    )


def tokenize(nt: NormalizedText) -> List[Token]:
    tokens = []
    text = nt.text
    n = len(text)
    j = 0
    while j < n:
        if text[j] == " ":
            j += 1
            continue
        start = j
        while j < n and text[j] != " ":
            j += 1
        end = j - 1
        o_start, o_end = nt.map[start], nt.map[end]
        # only spaces are ever inserted, so both ends have an origin
        assert o_start is not None and o_end is not None
        tokens.append(Token(text[start:j], start, end, o_start, o_end))
    return tokens


def project_back(nt: NormalizedText, norm_indices: Iterable[int]) -> Set[int]:
    """Map normalized indices to original ones; inserted characters vanish."""
    result = set()
    n = len(nt.text)
    for j in norm_indices:
        if not 0 <= j < n:
            raise IndexError(f"normalized index {j} out of range for text of length {n}")
        o = nt.map[j]
        if o is not None:
            result.add(o)
    return result


def prepare(text: str, preprocess: bool = True) -> List[Token]:
    """Normalize (or not) and tokenize in one call."""
    return tokenize(normalize(text) if preprocess else identity_text(text))


def surfaces(tokens: Sequence[Token]) -> List[str]:
    return [t.surface for t in tokens]
