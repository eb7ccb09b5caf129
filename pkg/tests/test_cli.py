import json

import numpy as np
import pytest

from latermbr.cli import main, read_candidates
from latermbr.model import load_model, random_toy_model, save_model
from reference_decoder import reference_later_mbr

CORPUS = "\n".join([
    "le chat dort\tthe cat sleeps",
    "le chien dort\tthe dog sleeps",
    "un chat mange\ta cat eats",
    "le chien voit le chat\tthe dog sees the cat",
    "un oiseau chante\ta bird sings",
]) + "\n"


@pytest.fixture
def toy(tmp_path):
    (tmp_path / "corpus.tsv").write_text(CORPUS)
    (tmp_path / "src.txt").write_text("le chat dort\nun chien mange\nle oiseau voit zebre\n")
    assert main(["estimate-model", "--corpus", str(tmp_path / "corpus.tsv"), "--output", str(tmp_path / "m.txt"),
                 "--max-length", "8"]) == 0
    return tmp_path


def run(capsys, *argv):
    try:
        code = main([str(a) for a in argv])
    except SystemExit as exc:  # argparse usage errors
        code = exc.code
    out, err = capsys.readouterr()
    return code, out, err


def decode(capsys, toy, *extra):
    return run(capsys, "decode", "--model", toy / "m.txt", "--input", toy / "src.txt", *extra)


def test_decode_strategies(capsys, toy):
    for strategy in ["beam", "mbr-rerank", "later-mbr"]:
        code, out, _ = decode(capsys, toy, "--strategy", strategy)
        assert code == 0
        assert len(out.splitlines()) == 3
        assert all(line and "</s>" not in line for line in out.splitlines())


def test_zero_extra_steps_equals_mbr_rerank(capsys, toy):
    a = decode(capsys, toy, "--strategy", "later-mbr", "--extra-steps", "0", "--verbose")[1]
    b = decode(capsys, toy, "--strategy", "mbr-rerank", "--verbose")[1]
    assert a == b


def test_beam_one_is_greedy(capsys, toy):
    model = load_model(toy / "m.txt")
    out = decode(capsys, toy, "--strategy", "beam", "--beam-size", "1")[1].splitlines()
    src = model.encode_source("le chat dort".split())
    state, last, toks = model.initial_state(src), None, []
    while True:
        logp, state = model.step(src, state, last)
        last = int(np.argmax(logp))
        if last == model.eos:
            break
        toks.append(last)
    assert out[0] == " ".join(model.decode_target(toks))


def test_decode_matches_reference_interpreter(capsys, tmp_path):
    rng = np.random.default_rng(5)
    model = random_toy_model(rng, n_source=5, n_content=5, max_length=6)
    save_model(model, tmp_path / "m.txt")
    sources = [tuple(int(t) for t in rng.integers(1, 5, rng.integers(1, 4))) for _ in range(20)]
    (tmp_path / "src.txt").write_text("".join(" ".join(model.source_vocab[t] for t in s) + "\n" for s in sources))
    code, out, _ = run(capsys, "decode", "--model", tmp_path / "m.txt", "--input", tmp_path / "src.txt",
                       "--beam-size", 3, "--max-length", 6)
    assert code == 0
    for line, src in zip(out.splitlines(), sources):
        want, _ = reference_later_mbr(model, src, 3, len(src), 1.0, 0.1, max_length=6)
        assert line == " ".join(model.decode_target(want))


def test_jobs_do_not_change_output(capsys, toy):
    assert decode(capsys, toy, "--verbose")[1] == decode(capsys, toy, "--verbose", "--jobs", 2)[1]


def test_candidates_round_trip_into_rerank(capsys, toy):
    code, _, _ = decode(capsys, toy, "--candidates-out", toy / "c.jsonl", "--trace", toy / "t.jsonl")
    assert code == 0
    assert len(read_candidates(toy / "c.jsonl")) == 3
    assert all("sentence" in json.loads(line) for line in (toy / "t.jsonl").read_text().splitlines())
    exact = run(capsys, "rerank", "--input", toy / "c.jsonl")[1]
    code, naive, err = run(capsys, "rerank", "--input", toy / "c.jsonl", "--delta", "exact-naive")
    assert code == 0 and "3/3" in err
    assert [json.loads(x)["best"] for x in exact.splitlines()] == [json.loads(x)["best"] for x in naive.splitlines()]


def test_rerank_single_candidate_and_errors(capsys, tmp_path):
    f = tmp_path / "c.jsonl"
    f.write_text(json.dumps({"id": "a", "candidates": [{"text": "x y", "avg_logprob": -1.0}]}) + "\n")
    code, out, _ = run(capsys, "rerank", "--input", f)
    assert code == 0 and json.loads(out)["ranking"] == [0]
    f.write_text(f.read_text() + '{"id": "b", "candidates": [{"text": "x"}]}\n')
    code, _, err = run(capsys, "rerank", "--input", f)
    assert code == 2 and "c.jsonl:2" in err
    code, _, err = run(capsys, "rerank", "--input", tmp_path / "c.jsonl", "--delta", "approx")
    assert code == 1 and "--checkpoint" in err


def test_rerank_with_approx_reports_agreement(capsys, tmp_path):
    cands = tmp_path / "c.jsonl"
    cands.write_text("".join(json.dumps({"id": i, "candidates": [
        {"text": "a b c", "avg_logprob": -1.0}, {"text": "a b", "avg_logprob": -1.5},
        {"text": "c b a d", "avg_logprob": -2.0}]}) + "\n" for i in range(2)))
    assert run(capsys, "train-approx", "--input", cands, "--output", tmp_path / "a.ckpt", "--epochs", 1,
               "--vocab-cap", 8, "--hidden", 4)[0] == 0
    code, out, err = run(capsys, "rerank", "--input", cands, "--delta", "approx", "--checkpoint", tmp_path / "a.ckpt")
    assert code == 0 and "rank-1 agreement with exact" in err
    assert all("agrees_with_exact" in json.loads(x) for x in out.splitlines())


def test_bench_rows(capsys):
    code, out, _ = run(capsys, "bench", "--sizes", "1,5", "--repetitions", 5, "--sentences", 1)
    rows = out.splitlines()
    assert code == 0 and rows[0] == "N,method,seconds_per_sentence,repetition"
    assert len(rows) - 1 == 5 * 3 * 2
    for method in ["naive", "batch", "approx"]:
        ns = [int(r.split(",")[0]) for r in rows[1:] if r.split(",")[1] == method]
        assert ns == sorted(ns)
    assert all(float(r.split(",")[2]) >= 0 for r in rows[1:])
    assert run(capsys, "bench", "--methods", "fast")[0] == 1


def test_train_approx_smoke(capsys, tmp_path):
    pairs = tmp_path / "p.tsv"
    pairs.write_text("".join(f"0 1\t{i % 3}\t0.05\n" for i in range(10)))
    code, _, err = run(capsys, "train-approx", "--pairs", pairs, "--output", tmp_path / "a.ckpt", "--epochs", 1,
                       "--log", tmp_path / "log.csv")
    assert code == 0 and (tmp_path / "a.ckpt").exists() and "mse" in err
    assert (tmp_path / "log.csv").read_text().splitlines()[0] == "epoch,mse"
    assert len((tmp_path / "log.csv").read_text().splitlines()) == 3


def test_train_policy_bandit_and_decode_with_policy(capsys, toy):
    code, _, _ = run(capsys, "train-policy", "--bandit", "--updates", 100, "--output", toy / "p.ckpt",
                     "--log", toy / "log.csv")
    assert code == 0
    rows = [line.split(",") for line in (toy / "log.csv").read_text().splitlines()[1:]]
    assert float(rows[-1][1]) > float(rows[0][1])
    assert decode(capsys, toy, "--policy", toy / "p.ckpt")[0] == 0


def test_train_policy_on_corpus(capsys, toy):
    code, _, _ = run(capsys, "train-policy", "--model", toy / "m.txt", "--input", toy / "corpus.tsv",
                     "--updates", 2, "--episodes", 3, "--beam-size", 2, "--output", toy / "p.ckpt")
    assert code == 0


def test_estimate_model_file_shows_estimate(capsys, tmp_path):
    (tmp_path / "c.tsv").write_text("a\tx y\na\tx\n")
    assert run(capsys, "estimate-model", "--corpus", tmp_path / "c.tsv", "--output", tmp_path / "m.txt",
               "--lex-floor", 0)[0] == 0
    assert f"a\tx\t{2 / 3!r}" in (tmp_path / "m.txt").read_text()


def test_exit_codes(capsys, toy):
    assert run(capsys, "decode", "--model", toy / "m.txt")[0] == 1
    assert run(capsys, "frobnicate")[0] == 1
    assert decode(capsys, toy, "--beam-size", 0)[0] == 2
    assert run(capsys, "decode", "--model", toy / "missing", "--input", toy / "src.txt")[0] == 2
    (toy / "bad.txt").write_text("toymodel 1\norder x\n")
    assert run(capsys, "decode", "--model", toy / "bad.txt", "--input", toy / "src.txt")[0] == 2


def outputs_of(capsys, toy, tag):
    """Run every command once, returning the bytes each produced."""
    d = toy / tag
    d.mkdir()
    got = {}
    decode(capsys, toy, "--candidates-out", d / "c.jsonl", "--trace", d / "t.jsonl", "--output", d / "out.txt",
           "--verbose")
    run(capsys, "rerank", "--input", d / "c.jsonl", "--delta", "exact-naive", "--output", d / "r.jsonl")
    run(capsys, "train-approx", "--input", d / "c.jsonl", "--output", d / "a.ckpt", "--epochs", 2,
        "--vocab-cap", 32, "--hidden", 4, "--log", d / "a.csv", "--pairs-out", d / "pairs.tsv")
    run(capsys, "train-policy", "--bandit", "--updates", 20, "--output", d / "p.ckpt", "--log", d / "p.csv")
    run(capsys, "estimate-model", "--corpus", toy / "corpus.tsv", "--output", d / "m.txt")
    run(capsys, "bench", "--sizes", "2,3", "--repetitions", 2, "--sentences", 1, "--output", d / "b.csv")
    for f in sorted(d.iterdir()):
        data = f.read_bytes()
        if f.name == "b.csv":  # wall-clock column excluded
            data = b"\n".join(b",".join(line.split(b",")[:2] + line.split(b",")[3:]) for line in data.splitlines())
        got[f.name] = data
    return got


def test_commands_are_deterministic(capsys, toy):
    a, b = outputs_of(capsys, toy, "a"), outputs_of(capsys, toy, "b")
    assert len(a) == 11
    assert a == b
