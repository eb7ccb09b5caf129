"""Train the discrepancy approximator on toy rerank tasks and measure how
often its rank-1 choice matches exact MBR reranking on held-out tasks.

    python3 scripts/train_approx_toy.py --train-tasks 100 --epochs 30 --lr 3e-3
"""
import argparse
import sys

import numpy as np

from latermbr.approx import (
    ApproxDiscrepancy,
    TrainConfig,
    approx_discrepancy_matrix,
    relabel,
    save_params,
    train_approximator,
    training_pairs,
)
from latermbr.ngram_bleu import cross_bleu
from latermbr.risk import EvidenceSpace, mbr_rerank
from latermbr.toytasks import rerank_task


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--train-tasks", type=int, default=100)
    ap.add_argument("--test-tasks", type=int, default=200)
    ap.add_argument("--hidden", type=int, default=32)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--lr", type=float, default=3e-3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--save", help="write the trained checkpoint here")
    args = ap.parse_args()

    train = [[e.seq for e in rerank_task(10_000 + i)] for i in range(args.train_tasks)]
    pairs = training_pairs(train)
    res = train_approximator(pairs, TrainConfig(hidden=args.hidden, vocab_cap=64, epochs=args.epochs,
                                                learning_rate=args.lr, seed=args.seed))
    print(f"{len(pairs)} pairs, target variance {np.var([t for _, _, t in pairs]):.3g}, "
          f"mse {res.losses[0]:.3g} -> {res.losses[-1]:.3g}")
    if args.save:
        save_params(res.params, args.save)

    approx = ApproxDiscrepancy(res.params)
    agree, xs, ys = 0, [], []
    for seed in range(args.test_tasks):
        evs = rerank_task(seed)
        seqs = [e.seq for e in evs]
        space = EvidenceSpace.from_evidences(evs)
        agree += mbr_rerank(evs, space, approx).best == mbr_rerank(evs, space).best
        off = ~np.eye(len(seqs), dtype=bool)
        xs += list(approx_discrepancy_matrix(res.params, relabel(seqs))[off])
        ys += list((1.0 - cross_bleu(seqs, seqs))[off])
    print(f"pair correlation with exact {np.corrcoef(xs, ys)[0, 1]:.3f}; "
          f"rank-1 agreement {agree}/{args.test_tasks} ({agree / args.test_tasks:.1%})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
