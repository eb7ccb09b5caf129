import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latermbr.model import (
    BOS,
    EOS,
    ModelFormatError,
    ToyModel,
    dumps_model,
    enumerate_complete,
    estimate_toy_model,
    load_model,
    loads_model,
    random_toy_model,
    read_corpus,
    save_model,
    score_sequence,
)
from latermbr.ngram_bleu import InvalidInput


def small_model(lexical, lm, lam, eos=(0.0, 0.25)):
    return ToyModel(("<unk>", "a", "b", "c"), ("</s>", "x", "y", "z"), np.array(lexical, dtype=float), lm,
                    order=2, add_k=1.0, lam=lam, eos_schedule=eos)


LEX = [[0, 1 / 3, 1 / 3, 1 / 3],
       [0, 0.5, 0.25, 0.25],
       [0, 0.0, 1.0, 0.0],
       [0, 0.2, 0.3, 0.5]]


def test_one_hot_lexicon_concentrates_content_mass():
    m = small_model(LEX, {}, lam=1.0)
    logp, _ = m.step((2,), m.initial_state((2,)), None)
    p = np.exp(logp)
    assert p[EOS] == 0.0
    assert p[2] == pytest.approx(1.0) and p[1] == 0.0 and p[3] == 0.0


def test_lambda_zero_is_lm_continuation():
    lm = {(BOS,): np.log([0.6, 0.3, 0.1]), (1,): np.log([0.1, 0.1, 0.8])}
    m = small_model(LEX, lm, lam=0.0)
    logp, state = m.step((1, 2), m.initial_state((1, 2)), None)
    np.testing.assert_allclose(np.exp(logp[1:]) / (1 - 0.0), [0.6, 0.3, 0.1], atol=1e-12)
    logp, state = m.step((1, 2), state, 1)
    assert state.history == (1,) and state.length == 1
    np.testing.assert_allclose(np.exp(logp[1:]) / 0.75, [0.1, 0.1, 0.8], atol=1e-12)
    assert np.exp(logp[EOS]) == pytest.approx(0.25)


def test_three_token_source_by_hand():
    lm = {(BOS,): np.log([0.5, 0.25, 0.25])}
    m = small_model(LEX, lm, lam=0.4)
    src = (1, 2, 3)
    logp, _ = m.step(src, m.initial_state(src), None)
    # lexical mean over rows a, b, c: x=(0.5+0+0.2)/3, y=(0.25+1+0.3)/3, z=(0.25+0+0.5)/3
    lex = [0.7 / 3, 1.55 / 3, 0.75 / 3]
    mix = [0.4 * lex[i] + 0.6 * q for i, q in enumerate([0.5, 0.25, 0.25])]
    np.testing.assert_allclose(np.exp(logp), [0.0] + mix, atol=1e-12)


def test_eos_forced_at_length_limit():
    m = small_model(LEX, {}, lam=0.5, eos=(0.0, 0.0))
    src = (1,)
    state, last = m.initial_state(src), None
    for _ in range(m.length_limit(src)):
        logp, state = m.step(src, state, last)
        assert logp[EOS] == -math.inf
        last = 1
    logp, _ = m.step(src, state, last)
    assert logp[EOS] == 0.0


def test_out_of_vocab_rejected():
    m = small_model(LEX, {}, lam=0.5)
    with pytest.raises(InvalidInput):
        m.step((9,), m.initial_state((9,)), None)
    with pytest.raises(InvalidInput):
        m.step((1,), m.initial_state((1,)), 7)


def test_estimate_single_pair():
    m = estimate_toy_model([(["a"], ["x"])])
    assert m.lexical[m.encode_source(["a"])[0], m.encode_target(["x"])[0]] == 1.0


def test_estimate_two_pairs():
    m = estimate_toy_model([(["a"], ["x", "y"]), (["a"], ["x"])])
    a = m.encode_source(["a"])[0]
    x, y = m.encode_target(["x", "y"])
    assert m.lexical[a, x] == pytest.approx(2 / 3)
    assert m.lexical[a, y] == pytest.approx(1 / 3)


def test_add_one_unseen_continuation_is_uniform():
    m = estimate_toy_model([(["a"], ["x", "y"])], order=2, add_k=1.0)
    y = m.encode_target(["y"])[0]
    # history "y" was seen once but never followed by anything
    assert (y,) not in m.lm
    np.testing.assert_allclose(m.lm_distribution((y,)), [0.5, 0.5])
    m1 = estimate_toy_model([(["a"], ["x", "y"])], order=1, add_k=1.0)
    np.testing.assert_allclose(np.exp(m1.lm[()]), [0.5, 0.5])


def test_empty_corpus_rejected():
    with pytest.raises(InvalidInput):
        estimate_toy_model([])


def test_round_trip_random_model(tmp_path):
    m = random_toy_model(np.random.default_rng(3), n_source=5, n_content=4, order=3, max_length=6)
    path = tmp_path / "m.txt"
    save_model(m, path)
    assert load_model(path) == m
    assert dumps_model(load_model(path)) == dumps_model(m)


def test_round_trip_estimated_model():
    corpus = [("a b".split(), "x y".split()), ("b c".split(), "y z x".split())]
    m = estimate_toy_model(corpus, order=3, add_k=0.5)
    assert loads_model(dumps_model(m)) == m


def test_truncated_file_reports_line():
    text = dumps_model(estimate_toy_model([(["a"], ["x", "y"])]))
    cut = "\n".join(text.split("\n")[:9])
    with pytest.raises(ModelFormatError) as err:
        loads_model(cut)
    assert "line" in str(err.value)


HAND_WRITTEN = """toymodel 1
order 1
add_k 1.0
lambda 0.5
lex_floor 0.0
max_length 4
\\source_vocab\\ 2
<unk>
a
\\target_vocab\\ 3
</s>
x
y
\\lexical\\ 3
<unk>\tx\t0.5
<unk>\ty\t0.5
a\tx\t1.0
\\lm\\ 2
-0.6931471805599453\tx
-0.6931471805599453\ty
\\eos\\ 2
0\t0.0
1\t0.5
\\end\\
"""


def test_hand_written_file():
    m = loads_model(HAND_WRITTEN)
    assert m.source_vocab == ("<unk>", "a") and m.target_vocab == ("</s>", "x", "y")
    assert m.lexical[:, 1:].tolist() == [[0.5, 0.5], [1.0, 0.0]]
    assert m.max_length == 4 and m.order == 1
    logp, _ = m.step((1,), m.initial_state((1,)), None)
    np.testing.assert_allclose(np.exp(logp), [0.0, 0.75, 0.25])


def test_bad_number_reports_line():
    with pytest.raises(ModelFormatError) as err:
        loads_model(HAND_WRITTEN.replace("a\tx\t1.0", "a\tx\tone"))
    assert err.value.lineno == 17


def test_read_corpus(tmp_path):
    p = tmp_path / "c.tsv"
    p.write_text("a b\tx y\nc\tz\n", encoding="utf-8")
    assert read_corpus(p) == [(["a", "b"], ["x", "y"]), (["c"], ["z"])]
    p.write_text("a b x y\n", encoding="utf-8")
    with pytest.raises(ModelFormatError):
        read_corpus(p)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3), st.lists(st.integers(1, 4), min_size=1, max_size=4),
       st.lists(st.integers(1, 4), max_size=6))
def test_step_distributions_normalize(seed, order, source, prefix):
    m = random_toy_model(np.random.default_rng(seed), n_source=5, n_content=4, order=order)
    state, last = m.initial_state(source), None
    for tok in prefix + [None]:
        logp, state = m.step(source, state, last)
        assert math.fsum(np.exp(logp)) == pytest.approx(1.0, abs=1e-9)
        last = tok


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.integers(0, 3), min_size=1, max_size=2))
def test_enumeration_total_probability(seed, source):
    m = random_toy_model(np.random.default_rng(seed), n_source=4, n_content=3, max_length=4)
    seqs = enumerate_complete(m, source, max_tokens=6)
    assert math.fsum(math.exp(lp) for _, lp in seqs) == pytest.approx(1.0, abs=1e-9)
    truncated = enumerate_complete(m, source, max_tokens=3)
    assert math.fsum(math.exp(lp) for _, lp in truncated) <= 1.0 + 1e-12
    tokens, lp = seqs[-1]
    assert score_sequence(m, source, tokens) == pytest.approx(lp, abs=1e-12)
