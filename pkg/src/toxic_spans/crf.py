"""Linear-chain CRF with Viterbi decoding and forward-backward gradients.

A path ``t_1..t_n`` scores ``start[t_1] + sum_i em[i, t_i] +
sum_i trans[t_i, t_{i+1}] + stop[t_n]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .neural_core import DTYPE, logsumexp

FORBIDDEN = -1e4


@dataclass
class CrfParams:
    transitions: np.ndarray  # (S, S), [from, to]
    start: np.ndarray  # (S,)
    stop: np.ndarray  # (S,)

    @property
    def num_tags(self) -> int:
        return self.start.shape[0]

    @classmethod
    def zeros(cls, num_tags: int) -> "CrfParams":
        return cls(np.zeros((num_tags, num_tags)), np.zeros(num_tags), np.zeros(num_tags))


@dataclass
class CrfGrads:
    em: np.ndarray
    transitions: np.ndarray
    start: np.ndarray
    stop: np.ndarray


def bio_constraints(num_tags: int = 3) -> Tuple[np.ndarray, np.ndarray]:
    """Additive penalties forbidding O->I and a sequence-initial I (O=0, B=1, I=2)."""
    trans = np.zeros((num_tags, num_tags))
    start = np.zeros(num_tags)
    trans[0, 2] = FORBIDDEN
    start[2] = FORBIDDEN
    return trans, start


def _check(em: np.ndarray, crf: CrfParams):
    if em.ndim != 2 or em.shape[0] < 1:
        raise ValueError("emissions must be an (n>=1, S) matrix")
    if em.shape[1] != crf.num_tags:
        raise ValueError(f"emission width {em.shape[1]} != CRF tag count {crf.num_tags}")


def _forward(em, crf):
    n, S = em.shape
    alpha = np.empty((n, S), dtype=DTYPE)
    alpha[0] = crf.start + em[0]
    for i in range(1, n):
        alpha[i] = logsumexp(alpha[i - 1][:, None] + crf.transitions, axis=0) + em[i]
    return alpha


def _backward(em, crf):
    n, S = em.shape
    beta = np.empty((n, S), dtype=DTYPE)
    beta[-1] = crf.stop
    for i in range(n - 2, -1, -1):
        beta[i] = logsumexp(crf.transitions + (em[i + 1] + beta[i + 1])[None, :], axis=1)
    return beta


def log_partition(em: np.ndarray, crf: CrfParams) -> float:
    em = np.asarray(em, dtype=DTYPE)
    _check(em, crf)
    alpha = _forward(em, crf)
    return float(logsumexp(alpha[-1] + crf.stop))


def path_score(em: np.ndarray, crf: CrfParams, tags: Sequence[int]) -> float:
    tags = list(tags)
    score = crf.start[tags[0]] + crf.stop[tags[-1]]
    score += sum(em[i, t] for i, t in enumerate(tags))
    score += sum(crf.transitions[a, b] for a, b in zip(tags[:-1], tags[1:]))
    return float(score)


def viterbi(em: np.ndarray, crf: CrfParams) -> Tuple[list, float]:
    """Best path and its score; ties go to the lower tag index."""
    em = np.asarray(em, dtype=DTYPE)
    _check(em, crf)
    n, S = em.shape
    delta = crf.start + em[0]
    back = np.zeros((n, S), dtype=np.int64)
    for i in range(1, n):
        cand = delta[:, None] + crf.transitions
        back[i] = np.argmax(cand, axis=0)  # argmax returns the first maximum
        delta = cand[back[i], np.arange(S)] + em[i]
    final = delta + crf.stop
    best = int(np.argmax(final))
    path = [best]
    for i in range(n - 1, 0, -1):
        best = int(back[i, best])
        path.append(best)
    path.reverse()
    return path, float(final[path[-1]])


def marginals(em: np.ndarray, crf: CrfParams) -> np.ndarray:
    em = np.asarray(em, dtype=DTYPE)
    _check(em, crf)
    alpha = _forward(em, crf)
    beta = _backward(em, crf)
    log_z = logsumexp(alpha[-1] + crf.stop)
    return np.exp(alpha + beta - log_z)


def nll_and_grad(em: np.ndarray, crf: CrfParams, gold: Sequence[int]) -> Tuple[float, CrfGrads]:
    """Negative log-likelihood of ``gold`` and its gradients via forward-backward."""
    em = np.asarray(em, dtype=DTYPE)
    _check(em, crf)
    gold = np.asarray(gold, dtype=np.int64)
    n, S = em.shape
    if gold.shape != (n,):
        raise ValueError(f"gold length {gold.shape} does not match {n} emissions")
    alpha = _forward(em, crf)
    beta = _backward(em, crf)
    log_z = float(logsumexp(alpha[-1] + crf.stop))
    loss = log_z - path_score(em, crf, gold)

    unary = np.exp(alpha + beta - log_z)
    d_em = unary.copy()
    d_em[np.arange(n), gold] -= 1.0
    d_start = unary[0].copy()
    d_start[gold[0]] -= 1.0
    d_stop = unary[-1].copy()
    d_stop[gold[-1]] -= 1.0
    d_trans = np.zeros((S, S), dtype=DTYPE)
    if n > 1:
        # pairwise[i, a, b] = P(t_i = a, t_{i+1} = b)
        pair = (
            alpha[:-1, :, None]
            + crf.transitions[None, :, :]
            + (em[1:] + beta[1:])[:, None, :]
            - log_z
        )
        d_trans = np.exp(pair).sum(axis=0)
        np.add.at(d_trans, (gold[:-1], gold[1:]), -1.0)
    return loss, CrfGrads(d_em, d_trans, d_start, d_stop)
