"""Sequence-model interface and the toy translation model behind it.

The toy model is IBM-1 flavoured: the source enters only through the mean of
its lexical-table rows, mixed with a target n-gram LM. End of sequence is
governed by a per-step hazard schedule and forced once ``2 * |source| + 5``
content tokens have been emitted (or earlier with ``max_length``).
"""
from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Protocol, Sequence

import numpy as np

from .ngram_bleu import InvalidInput

EOS = 0
BOS = -1
UNK = 0
EOS_WORD = "</s>"
BOS_WORD = "<s>"
UNK_WORD = "<unk>"
FORMAT_HEADER = "toymodel 1"


class ModelFormatError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class SequenceModel(Protocol):
    eos: int

    def initial_state(self, source: Sequence[int]): ...

    def step(self, source: Sequence[int], state, last_token: Optional[int]) -> tuple[np.ndarray, object]:
        """Log-distribution over the next token after ``last_token``, and the
        state that has consumed ``last_token`` (``None`` at the start)."""
        ...


@dataclass(frozen=True)
class ModelState:
    history: tuple
    length: int


@dataclass(eq=False)
class ToyModel:
    source_vocab: tuple
    target_vocab: tuple
    lexical: np.ndarray          # (V_src, V_tgt), column EOS is zero
    lm: dict                     # history tuple -> log-probs over content tokens
    order: int = 2
    add_k: float = 1.0
    lam: float = 0.5
    lex_floor: float = 0.0
    eos_schedule: tuple = (0.0, 0.2)
    max_length: Optional[int] = None
    eos: int = field(default=EOS, init=False)

    def __post_init__(self):
        self.source_vocab = tuple(self.source_vocab)
        self.target_vocab = tuple(self.target_vocab)
        self.eos_schedule = tuple(float(x) for x in self.eos_schedule)
        self.lexical = np.asarray(self.lexical, dtype=np.float64)
        if not 1 <= self.order <= 3:
            raise InvalidInput(f"LM order must be 1..3, got {self.order}")
        if not 0.0 <= self.lam <= 1.0:
            raise InvalidInput(f"interpolation weight must be in [0, 1], got {self.lam}")
        if self.lexical.shape != (len(self.source_vocab), len(self.target_vocab)):
            raise InvalidInput("lexical table shape does not match vocabularies")
        self._src_index = {w: i for i, w in enumerate(self.source_vocab)}
        self._tgt_index = {w: i for i, w in enumerate(self.target_vocab)}

    def __eq__(self, other):
        if not isinstance(other, ToyModel):
            return NotImplemented
        same_lm = self.lm.keys() == other.lm.keys() and all(
            np.array_equal(v, other.lm[k]) for k, v in self.lm.items())
        return (self.source_vocab == other.source_vocab
                and self.target_vocab == other.target_vocab
                and np.array_equal(self.lexical, other.lexical)
                and same_lm
                and (self.order, self.add_k, self.lam, self.lex_floor, self.eos_schedule, self.max_length)
                == (other.order, other.add_k, other.lam, other.lex_floor, other.eos_schedule, other.max_length))

    @property
    def num_content(self) -> int:
        return len(self.target_vocab) - 1

    def encode_source(self, words: Iterable[str]) -> tuple:
        return tuple(self._src_index.get(w, UNK) for w in words)

    def encode_target(self, words: Iterable[str]) -> tuple:
        try:
            return tuple(self._tgt_index[w] for w in words)
        except KeyError as err:
            raise InvalidInput(f"unknown target word {err.args[0]!r}") from None

    def decode_target(self, ids: Iterable[int]) -> list:
        return [self.target_vocab[i] for i in ids if i != EOS]

    def length_limit(self, source: Sequence[int]) -> int:
        limit = 2 * len(source) + 5
        return limit if self.max_length is None else min(limit, self.max_length)

    def initial_state(self, source):
        return ModelState((BOS,) * (self.order - 1), 0)

    def eos_prob(self, source, length: int) -> float:
        if length >= self.length_limit(source):
            return 1.0
        return self.eos_schedule[min(length, len(self.eos_schedule) - 1)]

    def lexical_distribution(self, source) -> np.ndarray:
        rows = self.lexical[list(source), 1:]
        rows = (rows + self.lex_floor) / (1.0 + self.lex_floor * self.num_content)
        return rows.mean(axis=0)

    def lm_distribution(self, history: tuple) -> np.ndarray:
        logp = self.lm.get(history)
        if logp is None:
            return np.full(self.num_content, 1.0 / self.num_content)
        return np.exp(logp)

    def step(self, source, state, last_token):
        n_src, n_tgt = len(self.source_vocab), len(self.target_vocab)
        if len(source) == 0 or any(not 0 <= s < n_src for s in source):
            raise InvalidInput("source token out of vocabulary")
        if last_token is not None:
            if not 0 < last_token < n_tgt:
                raise InvalidInput(f"target token {last_token} out of vocabulary")
            history = (state.history + (last_token,))[1:] if self.order > 1 else ()
            state = ModelState(history, state.length + 1)
        content = self.lam * self.lexical_distribution(source) + (1.0 - self.lam) * self.lm_distribution(state.history)
        content = content / content.sum()
        e = self.eos_prob(source, state.length)
        probs = np.concatenate([[e], (1.0 - e) * content])
        with np.errstate(divide="ignore"):
            return np.log(probs), state


def score_sequence(model: SequenceModel, source, tokens) -> float:
    """Total log-probability of ``tokens`` (EOS included if present)."""
    state, last, total = model.initial_state(source), None, 0.0
    for tok in tokens:
        logp, state = model.step(source, state, last)
        total += float(logp[tok])
        last = tok
    return total


def enumerate_complete(model: SequenceModel, source, max_tokens: int) -> list:
    """Every finished sequence of at most ``max_tokens`` tokens (EOS included)
    with non-zero probability, as ``(tokens, total_logprob)`` pairs."""
    out = []
    frontier = [((), model.initial_state(source), None, 0.0)]
    while frontier:
        nxt = []
        for tokens, state, last, total in frontier:
            logp, new_state = model.step(source, state, last)
            for tok, lp in enumerate(logp):
                if lp == -math.inf:
                    continue
                seq = tokens + (tok,)
                if tok == model.eos:
                    out.append((seq, total + float(lp)))
                elif len(seq) < max_tokens:
                    nxt.append((seq, new_state, tok, total + float(lp)))
        frontier = nxt
    return out


def _normalize_rows(counts: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    sums = counts.sum(axis=1, keepdims=True)
    out = np.where(sums > 0, counts / np.where(sums > 0, sums, 1.0), fallback)
    return out


def estimate_toy_model(corpus: Sequence[tuple], order: int = 2, add_k: float = 1.0, lam: float = 0.5,
                       lex_floor: float = 0.01, max_length: Optional[int] = None) -> ToyModel:
    """Estimate a toy model from ``(source_words, target_words)`` pairs."""
    if len(corpus) == 0:
        raise InvalidInput("empty corpus")
    src_vocab, tgt_vocab = {UNK_WORD: 0}, {EOS_WORD: 0}
    for src, tgt in corpus:
        if len(src) == 0 or len(tgt) == 0:
            raise InvalidInput("corpus contains an empty sentence")
        for w in src:
            src_vocab.setdefault(w, len(src_vocab))
        for w in tgt:
            tgt_vocab.setdefault(w, len(tgt_vocab))
    V_s, V_t = len(src_vocab), len(tgt_vocab)

    cooc = np.zeros((V_s, V_t))
    unigram = np.zeros(V_t)
    lm_counts = defaultdict(Counter)
    lengths = Counter()
    for src, tgt in corpus:
        s_ids = [src_vocab[w] for w in src]
        t_ids = [tgt_vocab[w] for w in tgt]
        for s in s_ids:
            for t in t_ids:
                cooc[s, t] += 1
        for t in t_ids:
            unigram[t] += 1
        padded = [BOS] * (order - 1) + t_ids
        for i in range(order - 1, len(padded)):
            lm_counts[tuple(padded[i - order + 1:i])][padded[i]] += 1
        lengths[len(t_ids)] += 1
    lexical = _normalize_rows(cooc, unigram / unigram.sum())

    n_content = V_t - 1
    lm = {}
    for hist, ctr in lm_counts.items():
        counts = np.array([ctr[w] for w in range(1, V_t)], dtype=np.float64)
        denom = counts.sum() + add_k * n_content
        with np.errstate(divide="ignore"):
            lm[hist] = np.log((counts + add_k) / denom)

    longest = max(lengths)
    schedule = [0.0]
    survivors = sum(lengths.values())
    for t in range(1, longest + 1):
        # hazard of stopping after t tokens, add-k smoothed
        schedule.append((lengths[t] + add_k) / (survivors + 2 * add_k) if survivors + 2 * add_k > 0 else 1.0)
        survivors -= lengths[t]
    return ToyModel(tuple(src_vocab), tuple(tgt_vocab), lexical, lm, order=order, add_k=add_k, lam=lam,
                    lex_floor=lex_floor, eos_schedule=tuple(schedule), max_length=max_length)


def random_toy_model(rng: np.random.Generator, n_source: int = 4, n_content: int = 4, order: int = 2,
                     lam: float = 0.5, max_length: Optional[int] = None, concentration: float = 0.5,
                     eos_range: tuple = (0.1, 0.5)) -> ToyModel:
    """Random model with Dirichlet lexical rows and a dense random LM."""
    src_vocab = [UNK_WORD] + [f"s{i}" for i in range(1, n_source)]
    tgt_vocab = [EOS_WORD] + [f"w{i}" for i in range(1, n_content + 1)]
    lexical = np.zeros((n_source, n_content + 1))
    lexical[:, 1:] = rng.dirichlet(np.full(n_content, concentration), size=n_source)
    lm = {}
    histories = [()]
    for _ in range(order - 1):
        histories = [h + (t,) for h in histories for t in [BOS] + list(range(1, n_content + 1))]
    for h in histories:
        lm[h] = np.log(rng.dirichlet(np.full(n_content, concentration)))
    schedule = (0.0,) + tuple(rng.uniform(*eos_range, size=3))
    return ToyModel(tuple(src_vocab), tuple(tgt_vocab), lexical, lm, order=order, add_k=0.0, lam=lam,
                    eos_schedule=schedule, max_length=max_length)


def _fmt(x: float) -> str:
    return repr(float(x))


def _word(vocab, i):
    return BOS_WORD if i == BOS else vocab[i]


def dumps_model(model: ToyModel) -> str:
    lines = [FORMAT_HEADER,
             f"order {model.order}",
             f"add_k {_fmt(model.add_k)}",
             f"lambda {_fmt(model.lam)}",
             f"lex_floor {_fmt(model.lex_floor)}",
             f"max_length {'-' if model.max_length is None else model.max_length}",
             f"\\source_vocab\\ {len(model.source_vocab)}", *model.source_vocab,
             f"\\target_vocab\\ {len(model.target_vocab)}", *model.target_vocab]
    nz = np.argwhere(model.lexical != 0)
    lines.append(f"\\lexical\\ {len(nz)}")
    for s, t in nz:
        lines.append(f"{model.source_vocab[s]}\t{model.target_vocab[t]}\t{_fmt(model.lexical[s, t])}")
    lines.append(f"\\lm\\ {len(model.lm) * model.num_content}")
    for hist in sorted(model.lm):
        for w, lp in enumerate(model.lm[hist], start=1):
            gram = " ".join([_word(model.target_vocab, h) for h in hist] + [model.target_vocab[w]])
            lines.append(f"{_fmt(lp)}\t{gram}")
    lines.append(f"\\eos\\ {len(model.eos_schedule)}")
    lines.extend(f"{t}\t{_fmt(p)}" for t, p in enumerate(model.eos_schedule))
    lines.append("\\end\\")
    return "\n".join(lines) + "\n"


def save_model(model: ToyModel, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_model(model))


class _Lines:
    def __init__(self, text: str):
        self.lines = text.split("\n")
        self.pos = 0

    def next(self, what: str) -> str:
        if self.pos >= len(self.lines) or (self.pos == len(self.lines) - 1 and self.lines[-1] == ""):
            raise ModelFormatError(self.pos + 1, f"unexpected end of file, expected {what}")
        self.pos += 1
        return self.lines[self.pos - 1]

    def error(self, message: str) -> ModelFormatError:
        return ModelFormatError(self.pos, message)

    def keyed(self, key: str) -> str:
        line = self.next(key)
        name, _, value = line.partition(" ")
        if name != key:
            raise self.error(f"expected {key!r}, found {line!r}")
        return value

    def section(self, name: str) -> int:
        value = self.keyed(f"\\{name}\\")
        try:
            return int(value)
        except ValueError:
            raise self.error(f"bad entry count {value!r}") from None


def _parse_float(lines: _Lines, text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise lines.error(f"not a number: {text!r}") from None


def loads_model(text: str) -> ToyModel:
    lines = _Lines(text)
    if lines.next("header") != FORMAT_HEADER:
        raise lines.error(f"expected header {FORMAT_HEADER!r}")
    try:
        order = int(lines.keyed("order"))
    except ValueError:
        raise lines.error("bad order") from None
    add_k = _parse_float(lines, lines.keyed("add_k"))
    lam = _parse_float(lines, lines.keyed("lambda"))
    lex_floor = _parse_float(lines, lines.keyed("lex_floor"))
    raw = lines.keyed("max_length")
    try:
        max_length = None if raw == "-" else int(raw)
    except ValueError:
        raise lines.error(f"bad max_length {raw!r}") from None

    src = [lines.next("source word") for _ in range(lines.section("source_vocab"))]
    tgt = [lines.next("target word") for _ in range(lines.section("target_vocab"))]
    if not src or not tgt or tgt[0] != EOS_WORD:
        raise lines.error(f"target vocabulary must start with {EOS_WORD}")
    s_index = {w: i for i, w in enumerate(src)}
    t_index = {w: i for i, w in enumerate(tgt)}
    t_index_hist = dict(t_index, **{BOS_WORD: BOS})

    lexical = np.zeros((len(src), len(tgt)))
    for _ in range(lines.section("lexical")):
        parts = lines.next("lexical entry").split("\t")
        if len(parts) != 3 or parts[0] not in s_index or parts[1] not in t_index:
            raise lines.error("malformed lexical entry")
        lexical[s_index[parts[0]], t_index[parts[1]]] = _parse_float(lines, parts[2])

    n_content = len(tgt) - 1
    lm = {}
    for _ in range(lines.section("lm")):
        parts = lines.next("lm entry").split("\t")
        if len(parts) != 2:
            raise lines.error("malformed lm entry")
        words = parts[1].split(" ")
        if len(words) != order or any(w not in t_index_hist for w in words) or words[-1] not in t_index:
            raise lines.error(f"bad n-gram {parts[1]!r}")
        hist = tuple(t_index_hist[w] for w in words[:-1])
        lm.setdefault(hist, np.full(n_content, np.nan))[t_index[words[-1]] - 1] = _parse_float(lines, parts[0])
    for hist, row in lm.items():
        if np.isnan(row).any():
            raise lines.error(f"incomplete lm history {hist}")

    schedule = []
    for t in range(lines.section("eos")):
        parts = lines.next("eos entry").split("\t")
        if len(parts) != 2 or parts[0] != str(t):
            raise lines.error("malformed eos entry")
        schedule.append(_parse_float(lines, parts[1]))
    if lines.next("end marker") != "\\end\\":
        raise lines.error("expected \\end\\")
    try:
        return ToyModel(tuple(src), tuple(tgt), lexical, lm, order=order, add_k=add_k, lam=lam,
                        lex_floor=lex_floor, eos_schedule=tuple(schedule), max_length=max_length)
    except InvalidInput as err:
        raise lines.error(str(err)) from None


def load_model(path) -> ToyModel:
    with open(path, encoding="utf-8") as f:
        return loads_model(f.read())


def read_corpus(path) -> list:
    """Tab-separated ``source<TAB>target`` lines, tokens split on single spaces."""
    pairs = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            src, tab, tgt = line.partition("\t")
            if not tab:
                raise ModelFormatError(lineno, "expected source<TAB>target")
            pairs.append((src.split(" "), tgt.split(" ")))
    return pairs
