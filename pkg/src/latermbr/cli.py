"""Command-line entry point: decode, rerank, bench, train-approx, train-policy,
estimate-model.

Exit codes: 0 success, 1 usage error, 2 data error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import Optional, Sequence

import numpy as np

from . import approx, model as toymodel, policy
from .checkpoint import CheckpointError
from .ngram_bleu import InvalidInput
from .risk import EXACT, Evidence, EvidenceSpace, mbr_rerank, naive_rerank_early_stop
from .search import (
    DecodeConfig,
    beam_search,
    decode_features,
    dump_trace,
    later_stage_mbr_decode,
    mbr_rerank_decode,
)

log = logging.getLogger("latermbr")

DATA_ERRORS = (InvalidInput, toymodel.ModelFormatError, CheckpointError, approx.TrainingError,
               policy.UpdateRejected, OSError, json.JSONDecodeError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- candidate files

@dataclass
class CandidateRecord:
    id: object
    candidates: list  # of Evidence over word tuples


def read_candidates(path) -> list:
    records, seen = [], set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rid = obj["id"]
                cands = [Evidence(tuple(c["text"].split()), float(c["avg_logprob"])) for c in obj["candidates"]]
            except (ValueError, KeyError, TypeError, AttributeError, InvalidInput) as err:
                raise InvalidInput(f"{path}:{lineno}: malformed record ({err})") from None
            if not cands or any(len(c.seq) == 0 for c in cands):
                raise InvalidInput(f"{path}:{lineno}: empty candidate list or empty candidate")
            key = json.dumps(rid)
            if key in seen:
                raise InvalidInput(f"{path}:{lineno}: duplicate id {rid!r}")
            seen.add(key)
            records.append(CandidateRecord(rid, cands))
    return records


def candidate_line(rid, evidences: Sequence[Evidence]) -> str:
    return json.dumps({"id": rid, "candidates": [{"text": " ".join(map(str, e.seq)), "avg_logprob": e.avg_logprob}
                                                 for e in evidences]}) + "\n"


# ---------------------------------------------------------------- decode

def _read_sources(path) -> list:
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n").split("\t")[0].split() for line in f]


def _decode_one(words, model, config: DecodeConfig, strategy: str, delta, policy_params):
    source = model.encode_source(words)
    if strategy == "beam":
        finished, _ = beam_search(model, source, config.beam_size, config.max_length)
        if not finished:
            raise InvalidInput("beam search produced no finished hypothesis")
        ev = [h.evidence() for h in finished]
        return finished[0].content, float("nan"), finished[0].avg_logprob, ev, []
    weights = None
    if policy_params is not None:
        weights = lambda st: policy.act(policy_params, decode_features(st, source, config))  # noqa: E731
    if strategy == "mbr-rerank":
        res = mbr_rerank_decode(model, source, config, delta)
    else:
        res = later_stage_mbr_decode(model, source, config, delta, weights)
    return (res.output.content, float(res.report.risks[res.report.best]), res.output.avg_logprob,
            [h.evidence() for h in res.evidence], res.trace)


def cmd_decode(args) -> int:
    model = toymodel.load_model(args.model)
    config = DecodeConfig(beam_size=args.beam_size, extra_steps=args.extra_steps, alpha=args.alpha,
                          beta=args.beta, rerank_pool_factor=args.pool_factor, max_length=args.max_length)
    delta = _delta(args.delta, args.checkpoint)
    policy_params = policy.load_policy(args.policy) if args.policy else None
    sources = _read_sources(args.input)
    if any(not s for s in sources):
        raise InvalidInput(f"{args.input}: empty source line")
    work = partial(_decode_one, model=model, config=config, strategy=args.strategy, delta=delta,
                   policy_params=policy_params)
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(work, sources))
    else:
        results = [work(s) for s in sources]

    out, cands, trace = [], [], []
    for i, (content, risk, avg, evidences, tr) in enumerate(results):
        text = " ".join(model.decode_target(content))
        out.append(f"{text}\t{risk!r}\t{avg!r}\n" if args.verbose else text + "\n")
        cands.append(candidate_line(i, [Evidence(tuple(model.decode_target(e.seq)), e.avg_logprob)
                                        for e in evidences]))
        trace.extend(dict(rec, sentence=i) for rec in tr)
    _write(args.output, "".join(out))
    if args.candidates_out:
        _write(args.candidates_out, "".join(cands))
    if args.trace:
        _write(args.trace, dump_trace(trace))
    return 0


# ---------------------------------------------------------------- rerank

def _delta(name: str, checkpoint: Optional[str]):
    if name == "approx":
        if not checkpoint:
            raise UsageError("--delta approx needs --checkpoint")
        return approx.ApproxDiscrepancy(approx.load_params(checkpoint))
    return EXACT


def rerank_record(rec: CandidateRecord, method: str, delta=EXACT):
    space = EvidenceSpace.from_evidences(rec.candidates)
    if method == "exact-naive":
        return naive_rerank_early_stop(rec.candidates, space, delta)
    return mbr_rerank(rec.candidates, space, delta)


def cmd_rerank(args) -> int:
    delta = _delta(args.delta, args.checkpoint)
    records = read_candidates(args.input)
    lines, agree = [], 0
    for rec in records:
        report = rerank_record(rec, args.delta, delta)
        exact_best = report.best if args.delta == "exact" else rerank_record(rec, "exact").best
        agree += report.best == exact_best
        obj = {"id": rec.id, "best": " ".join(rec.candidates[report.best].seq), "ranking": report.ranking,
               "risks": [float(r) for r in report.risks], "agrees_with_exact": bool(report.best == exact_best)}
        if report.partial.any():
            obj["partial"] = [bool(p) for p in report.partial]
        lines.append(json.dumps(obj) + "\n")
    _write(args.output, "".join(lines))
    if records:
        print(f"rank-1 agreement with exact: {agree}/{len(records)} ({agree / len(records):.1%})", file=sys.stderr)
    return 0


# ---------------------------------------------------------------- bench

def synthetic_candidates(rng: np.random.Generator, n: int, vocab: int = 50, length: tuple = (15, 30)) -> list:
    """``n`` noisy copies of one random sentence, with made-up log-probs."""
    base = rng.integers(0, vocab, rng.integers(*length))
    out = []
    for _ in range(n):
        seq = base.copy()
        flips = rng.random(len(seq)) < 0.2
        seq[flips] = rng.integers(0, vocab, flips.sum())
        keep = rng.random(len(seq)) >= 0.05
        seq = seq[keep] if keep.any() else seq[:1]
        out.append(Evidence(tuple(int(t) for t in seq), float(-rng.exponential(1.0) - 0.1 * flips.sum())))
    return out


def bench_rows(sizes: Sequence[int], methods: Sequence[str], repetitions: int, sentences: int, seed: int,
               approx_params: Optional[approx.ApproxParams] = None) -> list:
    rng = np.random.default_rng(seed)
    data = {n: [synthetic_candidates(rng, n) for _ in range(sentences)] for n in sizes}
    if "approx" in methods and approx_params is None:
        approx_params = approx.ApproxParams.init(64, 32, seed=seed)
    runners = {
        "naive": lambda c, s: naive_rerank_early_stop(c, s, EXACT),
        "batch": lambda c, s: mbr_rerank(c, s, EXACT),
        "approx": lambda c, s: mbr_rerank(c, s, approx.ApproxDiscrepancy(approx_params)),
    }
    rows = []
    for method in methods:
        for n in sorted(sizes):
            for rep in range(repetitions):
                start = time.perf_counter()
                for cands in data[n]:
                    runners[method](cands, EvidenceSpace.from_evidences(cands))
                rows.append((n, method, (time.perf_counter() - start) / sentences, rep))
    return rows


def cmd_bench(args) -> int:
    sizes = [int(x) for x in args.sizes.split(",")]
    methods = args.methods.split(",")
    unknown = set(methods) - {"naive", "batch", "approx"}
    if unknown or any(n < 1 for n in sizes) or args.repetitions < 1:
        raise UsageError(f"bad bench arguments: methods {sorted(unknown)}, sizes {sizes}")
    params = approx.load_params(args.checkpoint) if args.checkpoint else None
    rows = bench_rows(sizes, methods, args.repetitions, args.sentences, args.seed, params)
    lines = ["N,method,seconds_per_sentence,repetition\n"]
    lines += [f"{n},{m},{t:.9f},{r}\n" for n, m, t, r in rows]
    _write(args.output, "".join(lines))
    return 0


# ---------------------------------------------------------------- training

def cmd_train_approx(args) -> int:
    if args.pairs:
        pairs = approx.read_pairs(args.pairs)
    elif args.input:
        pairs = approx.training_pairs([[e.seq for e in rec.candidates] for rec in read_candidates(args.input)])
    else:
        raise UsageError("train-approx needs --input or --pairs")
    if args.pairs_out:
        approx.write_pairs(pairs, args.pairs_out)
    cfg = approx.TrainConfig(hidden=args.hidden, vocab_cap=args.vocab_cap, epochs=args.epochs,
                             learning_rate=args.lr, batch_size=args.batch_size, seed=args.seed)
    res = approx.train_approximator(pairs, cfg)
    approx.save_params(res.params, args.output, {"epochs": args.epochs, "pairs": len(pairs), "seed": args.seed})
    if args.log:
        _write(args.log, "epoch,mse\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(res.losses)))
    print(f"mse {res.losses[0]:.6g} -> {res.losses[-1]:.6g} over {len(pairs)} pairs", file=sys.stderr)
    return 0


def cmd_train_policy(args) -> int:
    cfg = policy.PolicyTrainConfig(updates=args.updates, episodes_per_update=args.episodes, learning_rate=args.lr,
                                   baseline_lr=args.baseline_lr, seed=args.seed)
    if args.bandit:
        params, rows = policy.train_bandit(cfg, hidden=args.hidden)
    else:
        if not (args.model and args.input):
            raise UsageError("train-policy needs --model and --input (or --bandit)")
        model = toymodel.load_model(args.model)
        corpus = toymodel.read_corpus(args.input)
        dcfg = DecodeConfig(beam_size=args.beam_size, extra_steps=args.extra_steps, max_length=args.max_length)
        refs = [model.encode_target(w for w in t if w in model.target_vocab) for _, t in corpus]
        env = policy.DecodeEnvironment(model, [model.encode_source(s) for s, _ in corpus], refs, dcfg)
        params = policy.PolicyParams.init(5, args.hidden, seed=args.seed)
        params, rows = policy.train_policy(params, len(env), env.features, env.reward, cfg)
    policy.save_policy(params, args.output, {"updates": args.updates, "seed": args.seed, "bandit": args.bandit})
    if args.log:
        policy.write_log(rows, args.log)
    print(f"mean reward {rows[0][1]:.4f} -> {rows[-1][1]:.4f}", file=sys.stderr)
    return 0


def cmd_estimate_model(args) -> int:
    corpus = toymodel.read_corpus(args.corpus)
    m = toymodel.estimate_toy_model(corpus, order=args.order, add_k=args.add_k, lam=args.lam,
                                    lex_floor=args.lex_floor, max_length=args.max_length)
    toymodel.save_model(m, args.output)
    return 0


# ---------------------------------------------------------------- plumbing

def _write(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="latermbr", description=__doc__.split("\n")[0])
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("decode", help="decode a file of source sentences")
    d.add_argument("--model", required=True)
    d.add_argument("--input", required=True, help="one source sentence per line (text after a tab is ignored)")
    d.add_argument("--output", default="-")
    d.add_argument("--strategy", choices=["beam", "mbr-rerank", "later-mbr"], default="later-mbr")
    d.add_argument("--beam-size", type=int, default=5)
    d.add_argument("--extra-steps", type=int, default=None, help="default: source length")
    d.add_argument("--alpha", type=float, default=1.0)
    d.add_argument("--beta", type=float, default=0.1)
    d.add_argument("--pool-factor", type=int, default=3)
    d.add_argument("--max-length", type=int, default=100)
    d.add_argument("--delta", choices=["exact", "approx"], default="exact")
    d.add_argument("--checkpoint", help="approximator checkpoint for --delta approx")
    d.add_argument("--policy", help="policy checkpoint choosing alpha and beta per sentence")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--jobs", type=int, default=1)
    d.add_argument("--trace", help="write a JSON-lines decoding trace here")
    d.add_argument("--candidates-out", help="write the final candidate lists here")
    d.add_argument("--verbose", action="store_true", help="append risk and avg log-prob to each line")
    d.set_defaults(func=cmd_decode)

    r = sub.add_parser("rerank", help="MBR-rerank a candidate file")
    r.add_argument("--input", required=True)
    r.add_argument("--output", default="-")
    r.add_argument("--delta", choices=["exact", "exact-naive", "approx"], default="exact")
    r.add_argument("--checkpoint")
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(func=cmd_rerank)

    b = sub.add_parser("bench", help="time the rerankers")
    b.add_argument("--sizes", default="10,50,100,200")
    b.add_argument("--methods", default="naive,batch,approx")
    b.add_argument("--repetitions", type=int, default=5)
    b.add_argument("--sentences", type=int, default=3)
    b.add_argument("--checkpoint")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--output", default="-")
    b.set_defaults(func=cmd_bench)

    a = sub.add_parser("train-approx", help="fit the discrepancy approximator")
    a.add_argument("--input", help="candidate file; pairs are built within each record")
    a.add_argument("--pairs", help="training-pair file instead of --input")
    a.add_argument("--pairs-out")
    a.add_argument("--output", required=True)
    a.add_argument("--hidden", type=int, default=32)
    a.add_argument("--vocab-cap", type=int, default=256)
    a.add_argument("--epochs", type=int, default=50)
    a.add_argument("--lr", type=float, default=1e-4)
    a.add_argument("--batch-size", type=int, default=64)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--log", help="CSV of per-epoch MSE")
    a.set_defaults(func=cmd_train_approx)

    t = sub.add_parser("train-policy", help="REINFORCE training of the weight policy")
    t.add_argument("--bandit", action="store_true", help="synthetic bandit task instead of a corpus")
    t.add_argument("--model")
    t.add_argument("--input", help="source<TAB>reference corpus")
    t.add_argument("--output", required=True)
    t.add_argument("--hidden", type=int, default=100)
    t.add_argument("--updates", type=int, default=500)
    t.add_argument("--episodes", type=int, default=16)
    t.add_argument("--lr", type=float, default=0.01)
    t.add_argument("--baseline-lr", type=float, default=0.01)
    t.add_argument("--beam-size", type=int, default=5)
    t.add_argument("--extra-steps", type=int, default=None)
    t.add_argument("--max-length", type=int, default=100)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--log", help="CSV of update, mean reward, baseline MSE")
    t.set_defaults(func=cmd_train_policy)

    e = sub.add_parser("estimate-model", help="estimate a toy model from a parallel corpus")
    e.add_argument("--corpus", required=True)
    e.add_argument("--output", required=True)
    e.add_argument("--order", type=int, default=2)
    e.add_argument("--add-k", type=float, default=1.0)
    e.add_argument("--lambda", dest="lam", type=float, default=0.5)
    e.add_argument("--lex-floor", type=float, default=0.01)
    e.add_argument("--max-length", type=int, default=None)
    e.set_defaults(func=cmd_estimate_model)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as err:
        print(f"latermbr: error: {err}", file=sys.stderr)
        return 1
    except DATA_ERRORS as err:
        print(f"latermbr: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
