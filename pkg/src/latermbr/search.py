"""Beam search that keeps what it throws away, and later-stage MBR decoding.

Beam search here is the shrinking kind: every finished hypothesis taken into
the top of the ranking costs one beam slot. At each step the expansions
ranked just below the kept ones (up to ``beam_size`` of them) are recorded as
discarded; the unfinished ones seed the pool that later-stage decoding
revives.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .ngram_bleu import InvalidInput
from .risk import EXACT, Discrepancy, Evidence, EvidenceSpace, RiskReport, mbr_rerank, risks


@dataclass
class Hypothesis:
    tokens: tuple
    logprob: float
    state: object
    finished: bool
    uid: int = -1

    @property
    def avg_logprob(self) -> float:
        return self.logprob / len(self.tokens)

    @property
    def content(self) -> tuple:
        return self.tokens[:-1] if self.finished else self.tokens

    def evidence(self) -> Evidence:
        return Evidence(self.content, self.avg_logprob)


@dataclass(frozen=True)
class DecodeConfig:
    beam_size: int = 5
    extra_steps: Optional[int] = None
    alpha: float = 1.0
    beta: float = 0.1
    rerank_pool_factor: int = 3
    max_length: int = 100

    def __post_init__(self):
        if self.beam_size < 1:
            raise InvalidInput("beam_size must be >= 1")
        if self.extra_steps is not None and self.extra_steps < 0:
            raise InvalidInput("extra_steps must be >= 0")
        if self.max_length < 1:
            raise InvalidInput("max_length must be >= 1")
        if self.rerank_pool_factor < 1:
            raise InvalidInput("rerank_pool_factor must be >= 1")
        if self.alpha < 0 or self.beta < 0:
            raise InvalidInput("alpha and beta must be >= 0")

    def steps_for(self, source) -> int:
        return len(source) if self.extra_steps is None else self.extra_steps


def _children(model, source, hyp: Hypothesis):
    logp, state = model.step(source, hyp.state, hyp.tokens[-1] if hyp.tokens else None)
    for tok in np.flatnonzero(np.isfinite(logp)):
        tok = int(tok)
        yield Hypothesis(hyp.tokens + (tok,), hyp.logprob + float(logp[tok]), state, tok == model.eos), float(logp[tok])


def beam_search(model, source, beam_size: int, max_length: int = 100):
    """Return ``(finished, discarded)``.

    ``finished`` holds at most ``beam_size`` finished hypotheses sorted by
    average log-probability; ``discarded`` holds every unfinished expansion
    that fell just outside the beam, in the order it was dropped.
    """
    if beam_size < 1:
        raise InvalidInput("beam_size must be >= 1")
    beam = [Hypothesis((), 0.0, model.initial_state(source), False)]
    finished, discarded = [], []
    while beam and len(finished) < beam_size:
        expansions = [child for hyp in beam for child, _ in _children(model, source, hyp)]
        expansions.sort(key=lambda h: -h.avg_logprob)
        live = beam_size - len(finished)
        beam = []
        for hyp in expansions[:live]:
            if hyp.finished:
                finished.append(hyp)
            elif len(hyp.tokens) < max_length:
                beam.append(hyp)
        discarded.extend(h for h in expansions[live:live + beam_size]
                         if not h.finished and len(h.tokens) < max_length)
    finished.sort(key=lambda h: -h.avg_logprob)
    return finished[:beam_size], discarded


def score_hypothesis(y: Hypothesis, space: Optional[EvidenceSpace], t: int, T: int, alpha: float, beta: float,
                     delta: Discrepancy = EXACT, risk: Optional[float] = None) -> float:
    """avg log-prob - alpha * risk - beta * (T - t) * |y|."""
    if risk is None:
        risk = risks([y.content], space, delta)[0] if space is not None else 0.0
    return y.avg_logprob - alpha * risk - beta * ((T - t) * len(y.content))


@dataclass
class DecodeState:
    pool: list
    evidence: list
    capacity: int
    t: int = 0
    trace: list = field(default_factory=list)
    counter: object = field(default_factory=itertools.count, repr=False)

    def space(self) -> Optional[EvidenceSpace]:
        if not self.evidence:
            return None
        return EvidenceSpace.from_evidences([h.evidence() for h in self.evidence])

    def add_evidence(self, hyp: Hypothesis) -> bool:
        """Insert a finished hypothesis, evicting the lowest avg log-prob
        member once ``capacity`` is reached. Returns whether it was kept."""
        if len(hyp.content) == 0:
            return False
        if len(self.evidence) < self.capacity:
            self.evidence.append(hyp)
            return True
        worst = min(range(len(self.evidence)), key=lambda i: (self.evidence[i].avg_logprob, -i))
        if hyp.avg_logprob <= self.evidence[worst].avg_logprob:
            return False
        self.trace.append({"step": self.t, "action": "evict", "hyp": self.evidence[worst].uid})
        del self.evidence[worst]
        self.evidence.append(hyp)
        return True


@dataclass
class DecodeResult:
    output: Hypothesis
    report: RiskReport
    evidence: list
    trace: list
    alpha: float
    beta: float


def init_state(model, source, config: DecodeConfig) -> DecodeState:
    """Run beam search and set up the discarded pool and evidence list."""
    finished, discarded = beam_search(model, source, config.beam_size, config.max_length)
    state = DecodeState([], [], config.beam_size)
    counter = state.counter
    for h in finished:
        h.uid = next(counter)
        state.add_evidence(h)
    for h in discarded:
        h.uid = next(counter)
        state.pool.append(h)
    state.trace.append({"step": 0, "action": "init", "pool": len(state.pool),
                        "evidence": [h.uid for h in state.evidence]})
    return state


def decode_features(state: DecodeState, source, config: DecodeConfig, beam_cap: int = 100) -> np.ndarray:
    """Five numbers summarising a decode right after beam search."""
    lps = np.array([h.avg_logprob for h in state.evidence]) if state.evidence else np.zeros(1)
    return np.array([
        len(source) / config.max_length,
        lps.mean(),
        lps.std(),
        len(state.pool) / (config.beam_size * len(source)),
        config.beam_size / beam_cap,
    ])


def later_stage_mbr_decode(model, source, config: DecodeConfig, delta: Discrepancy = EXACT,
                           weights: Optional[Callable[[DecodeState], tuple]] = None) -> DecodeResult:
    """Beam search followed by ``T`` extra MBR-guided steps, then MBR
    reranking of the evidence list.

    ``weights`` may map the post-beam-search state to ``(alpha, beta)``,
    overriding the config values.
    """
    B = config.beam_size
    T = config.steps_for(source)
    state = init_state(model, source, config)
    alpha, beta = (config.alpha, config.beta) if weights is None else weights(state)
    alpha, beta = max(0.0, float(alpha)), max(0.0, float(beta))
    counter = state.counter

    for t in range(1, T + 1):
        state.t = t
        if not state.pool:
            state.trace.append({"step": t, "action": "noop", "pool": 0})
            continue
        by_prob = sorted(range(len(state.pool)), key=lambda i: -state.pool[i].avg_logprob)
        candidates = by_prob[:config.rerank_pool_factor * B]
        space = state.space()
        hyps = [state.pool[i] for i in candidates]
        r = risks([h.content for h in hyps], space, delta) if space is not None else np.zeros(len(hyps))
        scores = [score_hypothesis(h, space, t, T, alpha, beta, risk=float(ri)) for h, ri in zip(hyps, r)]
        ranked = sorted(range(len(hyps)), key=lambda k: -scores[k])[:B]
        selected = [hyps[k] for k in ranked]
        chosen = {candidates[k] for k in ranked}
        state.pool = [h for i, h in enumerate(state.pool) if i not in chosen]
        state.trace.append({"step": t, "action": "step", "pool": len(hyps), "remaining": len(state.pool)})
        for k in ranked:
            h = hyps[k]
            state.trace.append({"step": t, "action": "select", "hyp": h.uid, "avg_logprob": h.avg_logprob,
                                "risk": float(r[k]), "length_penalty": (T - t) * len(h.content),
                                "score": scores[k]})
        for h in selected:
            kids = sorted(_children(model, source, h), key=lambda c: -c[1])[:B]
            for child, _ in kids:
                child.uid = next(counter)
                if child.finished:
                    if state.add_evidence(child):
                        state.trace.append({"step": t, "action": "finish", "hyp": child.uid, "parent": h.uid,
                                            "avg_logprob": child.avg_logprob})
                elif len(child.tokens) < config.max_length:
                    state.pool.append(child)
        state.trace.append({"step": t, "action": "evidence", "evidence": [h.uid for h in state.evidence]})

    if not state.evidence:
        raise InvalidInput("decoding produced no finished hypothesis")
    space = state.space()
    report = mbr_rerank([h.evidence() for h in state.evidence], space, delta)
    return DecodeResult(state.evidence[report.best], report, list(state.evidence), state.trace, alpha, beta)


def mbr_rerank_decode(model, source, config: DecodeConfig, delta: Discrepancy = EXACT) -> DecodeResult:
    """Beam search, then MBR reranking of its finished hypotheses."""
    return later_stage_mbr_decode(model, source, DecodeConfig(
        beam_size=config.beam_size, extra_steps=0, alpha=config.alpha, beta=config.beta,
        rerank_pool_factor=config.rerank_pool_factor, max_length=config.max_length), delta)


def beam_decode(model, source, config: DecodeConfig) -> Hypothesis:
    finished, _ = beam_search(model, source, config.beam_size, config.max_length)
    if not finished:
        raise InvalidInput("beam search produced no finished hypothesis")
    return finished[0]


def dump_trace(trace: Sequence[dict]) -> str:
    return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in trace)
