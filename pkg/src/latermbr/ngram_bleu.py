"""Smoothed sentence-level BLEU, scalar and batch.

The batch kernel never compares strings pairwise. Every candidate becomes a
row of n-gram counts over the union of n-grams in the candidate set, and the
clipped match count of a pair is ``sum_k min(c_ik, c_jk)`` restricted to the
columns of one n-gram order.

Both paths share the final count-to-score transform (``_score_from_stats``
and its vectorized twin) so that they agree bit for bit, which keeps risk
rankings computed either way identical even on exact ties.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

MAX_ORDER = 4

TokenSeq = Sequence[int]


class InvalidInput(ValueError):
    pass


_LOG_TABLE: list[float] = [float("-inf")]


def _log_table(upto: int) -> list[float]:
    while len(_LOG_TABLE) <= upto:
        _LOG_TABLE.append(math.log(len(_LOG_TABLE)))
    return _LOG_TABLE


def _denominator(length: int, n: int) -> int:
    # add-1 smoothing of (|y| + 1 - n), clamped so short sequences stay defined
    return max(length + 2 - n, 1)


def _score_from_stats(matches: Sequence[int], cand_len: int, ref_len: int) -> float:
    table = _log_table(cand_len + 2)
    p = 0.0
    for n in range(1, MAX_ORDER + 1):
        p = p + (table[matches[n - 1] + 1] - table[_denominator(cand_len, n)])
    p = 0.25 * p
    brevity = min(1.0 - ref_len / cand_len, 0.0)
    return math.exp(brevity + p)


def ngram_counts(tokens: TokenSeq, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _check_seq(seq: TokenSeq) -> None:
    if len(seq) == 0:
        raise InvalidInput("empty token sequence")


def smoothed_bleu(candidate: TokenSeq, reference: TokenSeq) -> float:
    """Add-1 smoothed BLEU of ``candidate`` against a single ``reference``.

    The brevity term is ``min(1 - |reference| / |candidate|, 0)``; the score
    lies in (0, 1].
    """
    _check_seq(candidate)
    _check_seq(reference)
    matches = []
    for n in range(1, MAX_ORDER + 1):
        c = ngram_counts(candidate, n)
        r = ngram_counts(reference, n)
        matches.append(sum(min(k, r[g]) for g, k in c.items()))
    return _score_from_stats(matches, len(candidate), len(reference))


def discrepancy(candidate: TokenSeq, reference: TokenSeq) -> float:
    return 1.0 - smoothed_bleu(candidate, reference)


@dataclass(frozen=True)
class NGramIndex:
    """Count matrix ``counts`` (N x M), n-gram order per column, lengths."""

    counts: np.ndarray
    order: np.ndarray
    lengths: np.ndarray
    ngrams: tuple

    @property
    def num_candidates(self) -> int:
        return self.counts.shape[0]

    @property
    def num_ngrams(self) -> int:
        return self.counts.shape[1]

    def order_slices(self) -> list[slice]:
        # columns are grouped by order, so each order is one contiguous block
        bounds = np.searchsorted(self.order, np.arange(1, MAX_ORDER + 2))
        return [slice(int(bounds[n]), int(bounds[n + 1])) for n in range(MAX_ORDER)]


def build_ngram_index(candidates: Sequence[TokenSeq]) -> NGramIndex:
    """Index all n-grams (orders 1..4) of ``candidates``.

    Columns are grouped by order; within an order they follow first
    occurrence, scanning candidates in list order and positions left to right.
    """
    if len(candidates) == 0:
        raise InvalidInput("empty candidate list")
    for seq in candidates:
        _check_seq(seq)
    columns: list[dict] = [dict() for _ in range(MAX_ORDER)]
    for seq in candidates:
        seq = tuple(seq)
        for n in range(1, MAX_ORDER + 1):
            cols = columns[n - 1]
            for i in range(len(seq) - n + 1):
                cols.setdefault(seq[i:i + n], len(cols))
    offsets = np.cumsum([0] + [len(c) for c in columns])
    counts = np.zeros((len(candidates), int(offsets[-1])), dtype=np.int32)
    for row, seq in enumerate(candidates):
        seq = tuple(seq)
        for n in range(1, MAX_ORDER + 1):
            cols, base = columns[n - 1], offsets[n - 1]
            for i in range(len(seq) - n + 1):
                counts[row, base + cols[seq[i:i + n]]] += 1
    order = np.repeat(np.arange(1, MAX_ORDER + 1), [len(c) for c in columns])
    ngrams = tuple(g for cols in columns for g in cols)
    lengths = np.array([len(s) for s in candidates], dtype=np.int64)
    counts.setflags(write=False)
    order.setflags(write=False)
    lengths.setflags(write=False)
    return NGramIndex(counts, order, lengths, ngrams)


def count_vectors(candidates: Sequence[TokenSeq], ngrams: Sequence[tuple]) -> tuple[np.ndarray, np.ndarray]:
    """Counts of a fixed, caller-ordered n-gram list, plus the order vector."""
    ngrams = [tuple(g) for g in ngrams]
    counts = np.zeros((len(candidates), len(ngrams)), dtype=np.int64)
    for i, seq in enumerate(candidates):
        table = {}
        for g in set(ngrams):
            table[g] = ngram_counts(seq, len(g))[g]
        counts[i] = [table[g] for g in ngrams]
    return counts, np.array([len(g) for g in ngrams], dtype=np.int64)


def _match_counts_threshold(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # sum_k min(a_k, b_k) == sum_{t>=1} sum_k [a_k >= t][b_k >= t]
    top = int(min(a.max(initial=0), b.max(initial=0)))
    out = np.zeros((a.shape[0], b.shape[0]))
    for t in range(1, top + 1):
        out += (a >= t).astype(np.float64) @ (b >= t).astype(np.float64).T
    return out.astype(np.int64)


def _match_counts_minimum(a: np.ndarray, b: np.ndarray, budget: int = 1 << 22) -> np.ndarray:
    out = np.empty((a.shape[0], b.shape[0]), dtype=np.int64)
    step = max(1, budget // max(1, b.shape[0] * a.shape[1]))
    for lo in range(0, a.shape[0], step):
        chunk = a[lo:lo + step]
        out[lo:lo + step] = np.minimum(chunk[:, None, :], b[None, :, :]).sum(axis=2)
    return out


_MATCHERS = {"threshold": _match_counts_threshold, "minimum": _match_counts_minimum}


def _scores_from_stats(matches: np.ndarray, cand_len: np.ndarray, ref_len: np.ndarray) -> np.ndarray:
    """Vectorized ``_score_from_stats``; ``matches`` has shape (R, C, 4)."""
    table = np.array(_log_table(int(cand_len.max()) + 2))
    p = np.zeros(matches.shape[:2])
    for n in range(1, MAX_ORDER + 1):
        den = np.maximum(cand_len + 2 - n, 1)
        p = p + (table[matches[:, :, n - 1] + 1] - table[den][:, None])
    p = 0.25 * p
    brevity = np.minimum(1.0 - ref_len[None, :] / cand_len[:, None], 0.0)
    x = brevity + p
    # math.exp per distinct value keeps results identical to the scalar path
    uniq, inverse = np.unique(x, return_inverse=True)
    return np.array([math.exp(v) for v in uniq])[inverse].reshape(x.shape)


def bleu_block(index: NGramIndex, rows: Sequence[int] | slice, cols: Sequence[int] | slice,
               method: str = "threshold") -> np.ndarray:
    """BLEU of candidates ``rows`` (as hypotheses) against ``cols`` (as references)."""
    matcher = _MATCHERS[method]
    a = index.counts[rows]
    b = index.counts[cols]
    matches = np.stack([matcher(a[:, s], b[:, s]) for s in index.order_slices()], axis=2)
    return _scores_from_stats(matches, index.lengths[rows], index.lengths[cols])


def batch_bleu_matrix(index: NGramIndex, method: str = "threshold") -> np.ndarray:
    """N x N matrix with entry (i, j) = smoothed_bleu(y_i, y_j)."""
    everything = slice(None)
    return bleu_block(index, everything, everything, method=method)


def cross_bleu(candidates: Sequence[TokenSeq], references: Sequence[TokenSeq],
               method: str = "threshold") -> np.ndarray:
    """BLEU of every candidate against every reference, in one batch."""
    index = build_ngram_index(list(candidates) + list(references))
    n = len(candidates)
    return bleu_block(index, slice(0, n), slice(n, None), method=method)
