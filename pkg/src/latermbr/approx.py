"""Learned discrepancy: a single LSTM encodes both sequences and the pair is
scored as ``h.h' + v.(h + h') + b``.

Token ids are local to one candidate space (first occurrence order), so the
input layer only needs ``vocab_cap`` rows. The network is trained on
discrepancies scaled by ``SCALE``; ``ApproxDiscrepancy`` divides it back out.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .checkpoint import load_tensors, save_tensors
from .ngram_bleu import InvalidInput, TokenSeq, smoothed_bleu

log = logging.getLogger(__name__)

SCALE = 0.1
PARAM_NAMES = ("Wx", "Wh", "b", "v", "c")


class TrainingError(RuntimeError):
    pass


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class ApproxParams:
    Wx: np.ndarray  # (vocab_cap, 4d), gate blocks i, f, o, g
    Wh: np.ndarray  # (d, 4d)
    b: np.ndarray   # (4d,)
    v: np.ndarray   # (d,)
    c: np.ndarray   # ()

    @property
    def hidden(self) -> int:
        return self.Wh.shape[0]

    @property
    def vocab_cap(self) -> int:
        return self.Wx.shape[0]

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def copy(self) -> "ApproxParams":
        return ApproxParams(**{k: np.array(v, copy=True) for k, v in self.as_dict().items()})

    @classmethod
    def init(cls, vocab_cap: int, hidden: int = 32, seed: int = 0, scale: float = 0.08) -> "ApproxParams":
        rng = np.random.default_rng(seed)
        u = lambda *shape: rng.uniform(-scale, scale, size=shape)
        return cls(u(vocab_cap, 4 * hidden), u(hidden, 4 * hidden), u(4 * hidden), u(hidden), np.array(u()))

    @classmethod
    def zeros(cls, vocab_cap: int, hidden: int) -> "ApproxParams":
        return cls(np.zeros((vocab_cap, 4 * hidden)), np.zeros((hidden, 4 * hidden)), np.zeros(4 * hidden),
                   np.zeros(hidden), np.array(0.0))


def local_vocab(seqs: Iterable[TokenSeq]) -> dict:
    table = {}
    for seq in seqs:
        for tok in seq:
            table.setdefault(tok, len(table))
    return table


def relabel(seqs: Sequence[TokenSeq], table: dict | None = None) -> list:
    table = local_vocab(seqs) if table is None else table
    return [tuple(table[t] for t in seq) for seq in seqs]


def _pad(seqs: Sequence[TokenSeq], vocab_cap: int):
    if any(len(s) == 0 for s in seqs):
        raise InvalidInput("empty sequence")
    lengths = np.array([len(s) for s in seqs])
    tokens = np.zeros((len(seqs), lengths.max()), dtype=np.int64)
    for i, s in enumerate(seqs):
        tokens[i, :len(s)] = s
    if tokens.max() >= vocab_cap or tokens.min() < 0:
        raise InvalidInput(f"local token id outside [0, {vocab_cap})")
    return tokens, lengths


def _forward(params: ApproxParams, tokens: np.ndarray, lengths: np.ndarray, keep_cache: bool = False):
    n, L = tokens.shape
    d = params.hidden
    h = np.zeros((n, d))
    c = np.zeros((n, d))
    cache = []
    for t in range(L):
        z = params.Wx[tokens[:, t]] + h @ params.Wh + params.b
        i, f, o = sigmoid(z[:, :d]), sigmoid(z[:, d:2 * d]), sigmoid(z[:, 2 * d:3 * d])
        g = np.tanh(z[:, 3 * d:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        m = (t < lengths)[:, None].astype(np.float64)
        if keep_cache:
            cache.append((h, c, i, f, o, g, tc, m))
        h = m * h_new + (1.0 - m) * h
        c = m * c_new + (1.0 - m) * c
    return h, cache


def _backward(params: ApproxParams, tokens: np.ndarray, cache, dh: np.ndarray) -> dict:
    grads = {k: np.zeros_like(v) for k, v in params.as_dict().items()}
    dc = np.zeros_like(dh)
    for t in reversed(range(tokens.shape[1])):
        h_prev, c_prev, i, f, o, g, tc, m = cache[t]
        dh_new, dc_new = m * dh, m * dc
        do = dh_new * tc
        dct = dc_new + dh_new * o * (1.0 - tc * tc)
        dz = np.concatenate([dct * g * i * (1.0 - i), dct * c_prev * f * (1.0 - f),
                             do * o * (1.0 - o), dct * i * (1.0 - g * g)], axis=1)
        grads["Wh"] += h_prev.T @ dz
        grads["b"] += dz.sum(axis=0)
        np.add.at(grads["Wx"], tokens[:, t], dz)
        dh = dz @ params.Wh.T + (1.0 - m) * dh
        dc = dct * f + (1.0 - m) * dc
    return grads


def encode_batch(params: ApproxParams, seqs: Sequence[TokenSeq]) -> np.ndarray:
    tokens, lengths = _pad(seqs, params.vocab_cap)
    return _forward(params, tokens, lengths)[0]


def encode(params: ApproxParams, seq: TokenSeq) -> np.ndarray:
    """Final hidden state of ``seq`` (local ids)."""
    return encode_batch(params, [seq])[0]


def _pair_score(params, h1, h2):
    return (h1 * h2).sum(axis=-1) + (h1 + h2) @ params.v + params.c


def approx_discrepancy(params: ApproxParams, y: TokenSeq, y2: TokenSeq) -> float:
    """Scaled approximate discrepancy between two local-id sequences."""
    h = encode_batch(params, [y, y2])
    return float(_pair_score(params, h[0], h[1]))


def approx_discrepancy_matrix(params: ApproxParams, candidates: Sequence[TokenSeq]) -> np.ndarray:
    h = encode_batch(params, candidates)
    hv = h @ params.v
    gram = h @ h.T
    gram = np.triu(gram) + np.triu(gram, 1).T
    return gram + (hv[:, None] + hv[None, :]) + params.c


def loss_and_grads(params: ApproxParams, left, right, targets) -> tuple[float, dict]:
    """Mean squared error over a batch of pairs, and its gradient."""
    seqs = list(left) + list(right)
    n = len(left)
    tokens, lengths = _pad(seqs, params.vocab_cap)
    h, cache = _forward(params, tokens, lengths, keep_cache=True)
    h1, h2 = h[:n], h[n:]
    err = _pair_score(params, h1, h2) - np.asarray(targets, dtype=np.float64)
    loss = float(np.mean(err * err))
    dpred = 2.0 * err / n
    dh = np.concatenate([dpred[:, None] * (h2 + params.v), dpred[:, None] * (h1 + params.v)])
    grads = _backward(params, tokens, cache, dh)
    grads["v"] = dpred @ (h1 + h2)
    grads["c"] = np.array(dpred.sum())
    return loss, grads


def mse(params: ApproxParams, pairs, batch_size: int = 256) -> float:
    total = 0.0
    for lo in range(0, len(pairs), batch_size):
        chunk = pairs[lo:lo + batch_size]
        tokens, lengths = _pad([p[0] for p in chunk] + [p[1] for p in chunk], params.vocab_cap)
        h = _forward(params, tokens, lengths)[0]
        err = _pair_score(params, h[:len(chunk)], h[len(chunk):]) - np.array([p[2] for p in chunk])
        total += float((err * err).sum())
    return total / len(pairs)


@dataclass
class TrainConfig:
    hidden: int = 32
    vocab_cap: int = 256
    epochs: int = 50
    learning_rate: float = 1e-4
    batch_size: int = 64
    seed: int = 0
    frozen: tuple = ()
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8


@dataclass
class TrainResult:
    params: ApproxParams
    losses: list = field(default_factory=list)


def train_approximator(pairs: Sequence[tuple], config: TrainConfig = TrainConfig(),
                       init: ApproxParams | None = None) -> TrainResult:
    """Adam on the pair MSE. ``pairs`` are ``(y, y2, target)`` with local ids.

    ``losses[0]`` is the MSE before training, ``losses[k]`` after epoch k.
    """
    if len(pairs) == 0:
        raise InvalidInput("no training pairs")
    params = ApproxParams.init(config.vocab_cap, config.hidden, config.seed) if init is None else init.copy()
    rng = np.random.default_rng(config.seed)
    m = {k: np.zeros_like(v) for k, v in params.as_dict().items()}
    s = {k: np.zeros_like(v) for k, v in params.as_dict().items()}
    b1, b2 = config.betas
    step = 0
    losses = [mse(params, pairs)]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(pairs))
        for lo in range(0, len(pairs), config.batch_size):
            batch = [pairs[k] for k in order[lo:lo + config.batch_size]]
            loss, grads = loss_and_grads(params, [p[0] for p in batch], [p[1] for p in batch],
                                         [p[2] for p in batch])
            if not math.isfinite(loss) or not all(np.isfinite(g).all() for g in grads.values()):
                raise TrainingError(f"non-finite loss {loss} at epoch {epoch}, batch starting {lo}")
            step += 1
            for k in PARAM_NAMES:
                if k in config.frozen:
                    continue
                m[k] = b1 * m[k] + (1 - b1) * grads[k]
                s[k] = b2 * s[k] + (1 - b2) * grads[k] ** 2
                mhat = m[k] / (1 - b1 ** step)
                shat = s[k] / (1 - b2 ** step)
                setattr(params, k, getattr(params, k) - config.learning_rate * mhat / (np.sqrt(shat) + config.eps))
        losses.append(mse(params, pairs))
        log.info("epoch %d mse %.6f", epoch, losses[-1])
    return TrainResult(params, losses)


def training_pairs(candidate_sets: Iterable[Sequence[TokenSeq]]) -> list:
    """All ordered pairs of distinct sequences within each candidate set,
    relabelled to local ids, with target ``SCALE * (1 - BLEU)``."""
    pairs = []
    for cands in candidate_sets:
        local = relabel(cands)
        for a in range(len(cands)):
            for b in range(len(cands)):
                if tuple(cands[a]) == tuple(cands[b]):
                    continue
                pairs.append((local[a], local[b], SCALE * (1.0 - smoothed_bleu(cands[a], cands[b]))))
    return pairs


class ApproxDiscrepancy:
    """Discrepancy source backed by a trained approximator (unscaled).

    Identical sequences get exactly zero, as they do under BLEU. The pair
    score is a Gram matrix plus a constant, which cannot place its minimum on
    the diagonal, so the network is only trained on and used for distinct
    pairs. Local ids are assigned over whatever sequences one call sees.
    """

    def __init__(self, params: ApproxParams):
        self.params = params

    def matrix(self, candidates, references):
        seqs = list(candidates) + list(references)
        h = encode_batch(self.params, relabel(seqs))
        n = len(candidates)
        h1, h2 = h[:n], h[n:]
        out = (h1 @ h2.T + (h1 @ self.params.v)[:, None] + (h2 @ self.params.v)[None, :] + self.params.c) / SCALE
        same = np.array([[tuple(a) == tuple(b) for b in references] for a in candidates], dtype=bool)
        out[same] = 0.0
        return out

    def pair(self, candidate, reference):
        if tuple(candidate) == tuple(reference):
            return 0.0
        y, y2 = relabel([candidate, reference])
        return approx_discrepancy(self.params, y, y2) / SCALE


def save_params(params: ApproxParams, path, meta: dict | None = None) -> None:
    save_tensors(path, params.as_dict(), dict(meta or {}, kind="approx"))


def load_params(path) -> ApproxParams:
    tensors, meta = load_tensors(path)
    if meta.get("kind") != "approx" or set(tensors) != set(PARAM_NAMES):
        raise InvalidInput(f"{path}: not an approximator checkpoint")
    return ApproxParams(**tensors)


def write_pairs(pairs, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for y, y2, target in pairs:
            f.write(f"{' '.join(map(str, y))}\t{' '.join(map(str, y2))}\t{target!r}\n")


def read_pairs(path) -> list:
    pairs = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.rstrip("\n").split("\t")
            try:
                pairs.append((tuple(int(x) for x in parts[0].split()), tuple(int(x) for x in parts[1].split()),
                              float(parts[2])))
            except (IndexError, ValueError):
                raise InvalidInput(f"{path}:{lineno}: malformed training pair") from None
    return pairs
