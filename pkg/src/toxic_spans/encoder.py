"""Shared token encoder: word lookup ++ char-BiLSTM embedding -> stacked sentence BiLSTM."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from . import neural_core as nc

UNK = "<unk>"


class Vocab:
    """String -> id table with the unknown symbol at id 0."""

    def __init__(self, items: Iterable[str] = ()):
        self.itos: List[str] = [UNK]
        self.stoi: Dict[str, int] = {UNK: 0}
        for it in items:
            self.add(it)

    def add(self, item: str) -> int:
        if item not in self.stoi:
            self.stoi[item] = len(self.itos)
            self.itos.append(item)
        return self.stoi[item]

    def get(self, item: str, default: int = 0) -> int:
        return self.stoi.get(item, default)

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]]) -> "Vocab":
        """Every item seen at least once, in sorted order (min frequency 1)."""
        seen = set()
        for sent in sentences:
            seen.update(sent)
        seen.discard(UNK)
        return cls(sorted(seen))

    @classmethod
    def from_list(cls, itos: Sequence[str]) -> "Vocab":
        if not itos or itos[0] != UNK:
            raise ValueError("vocabulary must start with the unknown symbol")
        return cls(itos[1:])


@dataclass
class EncoderConfig:
    word_dim: int = 100
    char_dim: int = 25
    char_hidden: int = 25
    lstm_hidden: int = 256
    lstm_layers: int = 1
    emb_dropout: float = 0.0
    lstm_dropout: float = 0.0
    use_lstm: bool = True
    max_word_chars: int = 32

    @property
    def output_dim(self) -> int:
        if self.use_lstm and self.lstm_layers > 0:
            return 2 * self.lstm_hidden
        return self.word_dim + 2 * self.char_hidden

    def validate(self):
        for name in ("word_dim", "char_dim", "char_hidden", "lstm_hidden", "max_word_chars"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lstm_layers < 0:
            raise ValueError("lstm_layers must be >= 0")
        for name in ("emb_dropout", "lstm_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must be in [0, 1)")


def init_encoder(params: nc.ModelParams, cfg: EncoderConfig, n_words: int, n_chars: int, rng):
    params.add("word_emb", nc.uniform_init(rng, (n_words, cfg.word_dim)))
    params.add("char.emb", nc.uniform_init(rng, (n_chars, cfg.char_dim)))
    nc.add_bilstm(params, "char.lstm", cfg.char_dim, cfg.char_hidden, rng)
    if cfg.use_lstm:
        d_in = cfg.word_dim + 2 * cfg.char_hidden
        for layer in range(cfg.lstm_layers):
            nc.add_bilstm(params, f"lstm.{layer}", d_in, cfg.lstm_hidden, rng)
            d_in = 2 * cfg.lstm_hidden


@dataclass
class Batch:
    """Padded id arrays for a list of tokenized sentences (every sentence nonempty)."""

    word_ids: np.ndarray  # (B, T)
    lengths: np.ndarray  # (B,)
    char_ids: np.ndarray  # (N_words, Lc), rows in sentence-major order
    char_lengths: np.ndarray  # (N_words,)

    @property
    def mask(self) -> np.ndarray:
        return nc.length_mask(self.lengths, self.word_ids.shape[1])


def make_batch(sentences: Sequence[Sequence[str]], words: Vocab, chars: Vocab, max_word_chars: int) -> Batch:
    if any(len(s) == 0 for s in sentences):
        raise ValueError("empty sentence in batch")
    B = len(sentences)
    T = max(len(s) for s in sentences)
    word_ids = np.zeros((B, T), dtype=np.int64)
    lengths = np.array([len(s) for s in sentences], dtype=np.int64)
    flat = [w[:max_word_chars] for s in sentences for w in s]
    Lc = max(len(w) for w in flat)
    char_ids = np.zeros((len(flat), Lc), dtype=np.int64)
    for b, sent in enumerate(sentences):
        word_ids[b, : len(sent)] = [words.get(w) for w in sent]
    for k, w in enumerate(flat):
        char_ids[k, : len(w)] = [chars.get(ch) for ch in w]
    char_lengths = np.array([len(w) for w in flat], dtype=np.int64)
    return Batch(word_ids, lengths, char_ids, char_lengths)


def encode(params: nc.ModelParams, cfg: EncoderConfig, batch: Batch, rng=None):
    """Token representations (B, T, D), zero at padding. ``rng`` enables dropout."""
    B, T = batch.word_ids.shape
    wvec, _ = nc.embedding_forward(params["word_emb"], batch.word_ids)
    cvec_flat, char_cache = nc.char_embed_forward(batch.char_ids, batch.char_lengths, params, "char")
    mask = batch.mask
    # scatter per-word char embeddings into (B, T, 2c)
    pos = np.nonzero(mask)
    cvec = np.zeros((B, T, cvec_flat.shape[1]))
    cvec[pos] = cvec_flat
    x = np.concatenate([wvec, cvec], axis=-1) * mask[:, :, None]
    emb_mask = nc.dropout_mask(rng, x.shape, cfg.emb_dropout)
    x = nc.apply_mask(x, emb_mask)
    layer_caches = []
    if cfg.use_lstm:
        for layer in range(cfg.lstm_layers):
            out, lc = nc.bilstm_forward_batch(x, batch.lengths, params, f"lstm.{layer}")
            dm = nc.dropout_mask(rng, out.shape, cfg.lstm_dropout)
            x = nc.apply_mask(out, dm)
            layer_caches.append((lc, dm))
    return x, (batch, char_cache, pos, emb_mask, layer_caches, cfg.word_dim)


def encode_backward(dx, cache, params: nc.ModelParams):
    batch, char_cache, pos, emb_mask, layer_caches, word_dim = cache
    for lc, dm in reversed(layer_caches):
        dx = nc.bilstm_backward_batch(nc.apply_mask(dx, dm), lc, params)
    dx = nc.apply_mask(dx, emb_mask) * batch.mask[:, :, None]
    params.grads["word_emb"] += nc.embedding_backward(dx[:, :, :word_dim], batch.word_ids, params["word_emb"].shape)
    nc.char_embed_backward(dx[:, :, word_dim:][pos], char_cache, params)
