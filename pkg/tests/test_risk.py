import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latermbr.ngram_bleu import InvalidInput, smoothed_bleu
from latermbr.risk import (
    Evidence,
    EvidenceSpace,
    bayes_risk,
    evidence_probs,
    mbr_rerank,
    naive_rerank_early_stop,
)
from oracles import brute_bleu

seqs = st.lists(st.integers(0, 9), min_size=1, max_size=8)
evidence = st.builds(Evidence, seqs, st.floats(-6.0, 0.0))
evidence_lists = st.lists(evidence, min_size=1, max_size=8)


def space_of(evs):
    return EvidenceSpace.from_evidences(evs)


def test_probs_trivial_cases():
    assert evidence_probs([Evidence([1], -3.0)]).tolist() == [1.0]
    assert evidence_probs([Evidence([1], -1.0), Evidence([2], -1.0)]).tolist() == [0.5, 0.5]
    p = evidence_probs([Evidence([1], -1.0), Evidence([2], -2.0)])
    z = math.exp(-1.0) + math.exp(-2.0)
    np.testing.assert_allclose(p, [math.exp(-1.0) / z, math.exp(-2.0) / z], atol=1e-15)
    np.testing.assert_allclose(p, [0.7311, 0.2689], atol=1e-4)


def test_probs_reject_empty():
    with pytest.raises(InvalidInput):
        evidence_probs([])


def test_risk_of_copy_is_zero():
    e = Evidence([1, 2, 3, 4], -0.5)
    assert bayes_risk([1, 2, 3, 4], space_of([e])) == 0.0


def test_single_evidence_risk_is_discrepancy():
    e = Evidence([1, 2, 3, 4, 5], -0.5)
    y = [1, 2, 3, 5, 4]
    assert bayes_risk(y, space_of([e])) == pytest.approx(1 - brute_bleu(y, e.seq), abs=1e-12)


def test_uniform_two_evidence_risk_is_mean():
    e1, e2 = Evidence([1, 2, 3], -1.0), Evidence([3, 2, 1, 1], -1.0)
    y = [1, 2, 1]
    want = 0.5 * (1 - brute_bleu(y, e1.seq)) + 0.5 * (1 - brute_bleu(y, e2.seq))
    assert bayes_risk(y, space_of([e1, e2])) == pytest.approx(want, abs=1e-12)


def test_copy_risk_falls_as_its_probability_rises():
    a, b = [1, 2, 3, 4], [5, 6, 7, 8]
    previous = math.inf
    for lp in [-3.0, -2.0, -1.0, 0.0]:
        r = bayes_risk(a, space_of([Evidence(a, lp), Evidence(b, -1.5)]))
        assert r < previous
        previous = r


def test_rerank_single_candidate():
    e = Evidence([4, 4, 2, 1], -1.0)
    rep = mbr_rerank([e], space_of([e]))
    assert rep.ranking == [0] and rep.risks.tolist() == [0.0]
    naive = naive_rerank_early_stop([e], space_of([e]))
    assert naive.ranking == [0] and naive.risks.tolist() == [0.0]


def test_tie_broken_by_logprob():
    ref = Evidence([1, 2, 3, 4], -1.0)
    a, b = Evidence([9, 8], -2.0), Evidence([8, 9], -0.5)
    rep = mbr_rerank([a, b], space_of([ref]))
    assert rep.risks[0] == rep.risks[1]
    assert rep.ranking == [1, 0]
    assert naive_rerank_early_stop([a, b], space_of([ref])).ranking[0] == 1


def test_pruned_candidate_never_first():
    good = Evidence([1, 2, 3, 4], -0.1)
    bad = Evidence([7, 7, 7, 7, 7], -0.2)
    space = space_of([good, Evidence([1, 2, 3, 5], -0.3)])
    rep = naive_rerank_early_stop([good, bad], space)
    assert rep.partial.tolist() == [False, True]
    assert rep.ranking[0] == 0


def naive_sorted_ranking(cands, space):
    r = [sum((1 - brute_bleu(c.seq, e.seq)) * p for e, p in zip(space.evidences, space.probs)) for c in cands]
    return r


@settings(max_examples=150, deadline=None)
@given(evidence_lists)
def test_rerankers_agree_with_oracle(evs):
    space = space_of(evs)
    fast = mbr_rerank(evs, space)
    naive = naive_rerank_early_stop(evs, space)
    oracle = naive_sorted_ranking(evs, space)
    np.testing.assert_allclose(fast.risks, oracle, atol=1e-9)
    assert naive.ranking[0] == fast.ranking[0]
    assert naive.risks[naive.best] == fast.risks[fast.best]
    assert fast.risks[fast.best] == pytest.approx(min(oracle), abs=1e-9)
    assert np.all(fast.risks >= 0) and np.all(fast.risks < 1)
    assert np.all(naive.risks[naive.partial] <= fast.risks[naive.partial] + 1e-12)


@settings(max_examples=100, deadline=None)
@given(evidence_lists, st.floats(-5, 5))
def test_shift_invariance(evs, shift):
    moved = [Evidence(e.seq, e.avg_logprob + shift) for e in evs]
    a, b = space_of(evs), space_of(moved)
    np.testing.assert_allclose(a.probs, b.probs, atol=1e-12)
    ra, rb = mbr_rerank(evs, a), mbr_rerank(moved, b)
    np.testing.assert_allclose(ra.risks, rb.risks, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(evidence_lists, seqs)
def test_risk_bounded_by_max_discrepancy(evs, y):
    space = space_of(evs)
    top = max(1 - smoothed_bleu(y, e.seq) for e in evs)
    assert 0 <= bayes_risk(y, space) <= top + 1e-12
