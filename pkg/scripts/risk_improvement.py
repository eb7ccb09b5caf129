"""Beam search vs MBR reranking vs later-stage MBR on small toy models.

Reports mean Bayes risk of each output against the later-stage evidence
space, and how often each output equals the minimum-risk sequence found by
enumerating every complete output.

    python3 scripts/risk_improvement.py --instances 100 --beams 2,5
"""
import argparse
import sys

import numpy as np

from latermbr.risk import EvidenceSpace, bayes_risk
from latermbr.search import DecodeConfig, beam_decode, later_stage_mbr_decode, mbr_rerank_decode
from latermbr.toytasks import mbr_optimum, small_instance


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--instances", type=int, default=100, help="per beam size")
    ap.add_argument("--beams", default="2,5")
    ap.add_argument("--alpha", type=float, default=1.0)
    ap.add_argument("--beta", type=float, default=0.1)
    args = ap.parse_args()
    print("B    risk:beam  rerank   later   optimum:beam  rerank   later")
    for B in [int(b) for b in args.beams.split(",")]:
        rows = []
        for seed in range(args.instances):
            m, src = small_instance(seed)
            cfg = DecodeConfig(beam_size=B, alpha=args.alpha, beta=args.beta)
            later = later_stage_mbr_decode(m, src, cfg)
            outs = [beam_decode(m, src, cfg).content, mbr_rerank_decode(m, src, cfg).output.content,
                    later.output.content]
            space = EvidenceSpace.from_evidences([h.evidence() for h in later.evidence])
            best = mbr_optimum(m, src)
            rows.append([bayes_risk(o, space) for o in outs] + [o == best for o in outs])
        r = np.mean(rows, axis=0)
        print(f"{B:<4} {r[0]:>10.4f} {r[1]:>7.4f} {r[2]:>7.4f} {r[3]:>13.1%} {r[4]:>7.1%} {r[5]:>7.1%}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
