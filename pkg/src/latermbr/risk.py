"""Evidence probabilities, Bayes risk and MBR reranking."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .ngram_bleu import InvalidInput, TokenSeq, cross_bleu, smoothed_bleu


class Discrepancy(Protocol):
    def matrix(self, candidates: Sequence[TokenSeq], references: Sequence[TokenSeq]) -> np.ndarray: ...

    def pair(self, candidate: TokenSeq, reference: TokenSeq) -> float: ...


class ExactDiscrepancy:
    """1 - smoothed BLEU; ``matrix`` goes through the batch kernel."""

    def __init__(self, method: str = "threshold"):
        self.method = method

    def matrix(self, candidates, references):
        return 1.0 - cross_bleu(candidates, references, method=self.method)

    def pair(self, candidate, reference):
        return 1.0 - smoothed_bleu(candidate, reference)


EXACT = ExactDiscrepancy()


@dataclass(frozen=True)
class Evidence:
    seq: tuple
    avg_logprob: float

    def __post_init__(self):
        object.__setattr__(self, "seq", tuple(self.seq))
        if not math.isfinite(self.avg_logprob):
            raise InvalidInput(f"non-finite avg_logprob {self.avg_logprob}")


def evidence_probs(evidences: Sequence[Evidence]) -> np.ndarray:
    if len(evidences) == 0:
        raise InvalidInput("empty evidence list")
    x = np.array([e.avg_logprob for e in evidences], dtype=np.float64)
    w = np.exp(x - x.max())
    return w / w.sum()


@dataclass(frozen=True)
class EvidenceSpace:
    evidences: tuple
    probs: np.ndarray

    @classmethod
    def from_evidences(cls, evidences: Sequence[Evidence]) -> "EvidenceSpace":
        evidences = tuple(evidences)
        return cls(evidences, evidence_probs(evidences))

    @property
    def seqs(self) -> list:
        return [e.seq for e in self.evidences]

    def __len__(self) -> int:
        return len(self.evidences)


@dataclass
class RiskReport:
    risks: np.ndarray
    ranking: list
    partial: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.partial is None:
            self.partial = np.zeros(len(self.risks), dtype=bool)

    @property
    def best(self) -> int:
        return self.ranking[0]


def _weighted_sum(deltas, probs) -> float:
    # fsum is order independent, so every path yields the same float
    return math.fsum(float(d) * float(p) for d, p in zip(deltas, probs))


def risks(candidates: Sequence[TokenSeq], space: EvidenceSpace, delta: Discrepancy = EXACT) -> np.ndarray:
    """Bayes risk of each candidate, from one discrepancy matrix."""
    d = delta.matrix([tuple(c) for c in candidates], space.seqs)
    return np.array([_weighted_sum(row, space.probs) for row in d])


def bayes_risk(y: TokenSeq, space: EvidenceSpace, delta: Discrepancy = EXACT) -> float:
    return float(risks([y], space, delta)[0])


def _rank(risk_values, logprobs) -> list:
    return sorted(range(len(risk_values)), key=lambda i: (risk_values[i], -logprobs[i], i))


def mbr_rerank(candidates: Sequence[Evidence], space: EvidenceSpace, delta: Discrepancy = EXACT) -> RiskReport:
    if len(candidates) == 0:
        raise InvalidInput("no candidates to rerank")
    r = risks([c.seq for c in candidates], space, delta)
    return RiskReport(r, _rank(r, [c.avg_logprob for c in candidates]))


def naive_rerank_early_stop(candidates: Sequence[Evidence], space: EvidenceSpace,
                            delta: Discrepancy = EXACT) -> RiskReport:
    """Pairwise reranker that abandons a candidate once its running risk
    exceeds the best complete risk seen so far.

    Abandoned candidates keep their partial sum (a lower bound) and are
    flagged in ``partial``; they are ranked after all complete candidates.
    """
    if len(candidates) == 0:
        raise InvalidInput("no candidates to rerank")
    probs = space.probs
    refs = space.seqs
    incumbent = math.inf
    values = np.zeros(len(candidates))
    partial = np.zeros(len(candidates), dtype=bool)
    for i, cand in enumerate(candidates):
        terms = []
        running = 0.0
        for ref, p in zip(refs, probs):
            terms.append(delta.pair(cand.seq, ref) * float(p))
            running += terms[-1]
            if running > incumbent and math.fsum(terms) > incumbent:
                partial[i] = True
                break
        values[i] = math.fsum(terms)
        if not partial[i]:
            incumbent = min(incumbent, values[i])
    logprobs = [c.avg_logprob for c in candidates]
    ranking = sorted(range(len(candidates)), key=lambda i: (partial[i], values[i], -logprobs[i], i))
    return RiskReport(values, ranking, partial)
