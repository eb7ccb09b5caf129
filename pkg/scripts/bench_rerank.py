"""Time per sentence of the naive, batch and approximate rerankers vs N.

    python3 scripts/bench_rerank.py --sizes 10,50,100,200 --repetitions 5
"""
import argparse
import sys
from collections import defaultdict

import numpy as np

from latermbr.cli import bench_rows


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--sizes", default="10,50,100,200")
    ap.add_argument("--methods", default="naive,batch,approx")
    ap.add_argument("--repetitions", type=int, default=5)
    ap.add_argument("--sentences", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rows = bench_rows([int(n) for n in args.sizes.split(",")], args.methods.split(","), args.repetitions,
                      args.sentences, args.seed)
    times = defaultdict(list)
    for n, method, secs, _ in rows:
        times[method, n].append(secs)
    print(f"{'N':>5} " + " ".join(f"{m:>12}" for m in args.methods.split(",")) + "   (ms per sentence, mean)")
    for n in sorted({n for _, n in times}):
        print(f"{n:>5} " + " ".join(f"{1e3 * np.mean(times[m, n]):>12.2f}" for m in args.methods.split(",")))
    return 0


if __name__ == "__main__":
    sys.exit(main())
