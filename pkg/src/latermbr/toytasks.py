"""Seeded toy workloads shared by the acceptance checks and scripts/."""
from __future__ import annotations

import numpy as np

from .model import ToyModel, enumerate_complete, random_toy_model
from .ngram_bleu import cross_bleu
from .search import beam_search


def rerank_task(seed: int, beam: int = 6) -> list:
    """Finished beam-search candidates (as Evidence) from one random toy
    model with fairly long outputs."""
    rng = np.random.default_rng(seed)
    m = random_toy_model(rng, n_source=6, n_content=8, max_length=12, concentration=0.3, eos_range=(0.02, 0.1))
    src = tuple(int(t) for t in rng.integers(1, 6, rng.integers(2, 5)))
    finished, _ = beam_search(m, src, beam)
    return [h.evidence() for h in finished]


def small_instance(seed: int, n_source: int = 4, n_content: int = 4, max_length: int = 5) -> tuple[ToyModel, tuple]:
    rng = np.random.default_rng(seed)
    m = random_toy_model(rng, n_source=n_source, n_content=n_content, max_length=max_length)
    src = tuple(int(t) for t in rng.integers(1, n_source, rng.integers(1, 4)))
    return m, src


def mbr_optimum(model: ToyModel, source) -> tuple:
    """Minimum-risk output over every complete sequence, with evidence
    weighted by true sequence probability."""
    every = enumerate_complete(model, source, max_tokens=model.length_limit(source) + 1)
    seqs = [toks[:-1] for toks, _ in every]
    lp = np.array([lp for _, lp in every])
    p = np.exp(lp - lp.max())
    return seqs[int(np.argmin((1.0 - cross_bleu(seqs, seqs)) @ (p / p.sum())))]
