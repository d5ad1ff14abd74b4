#!/usr/bin/env python3
"""Random-ranking baseline: what retrieval metrics look like with no model.

Draws random embeddings for N images and N captions over many seeds and
reports the image-search median rank and R@K. With 1000 candidates the
median should sit near 500 and R@10 near 1%.

    python3 scripts/random_baseline.py --n 1000 --seeds 20
"""

import argparse

import numpy as np

from capvec import retrieval
from capvec.numcore import make_rng


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=1000)
    parser.add_argument("--dim", type=int, default=16)
    parser.add_argument("--seeds", type=int, default=20)
    args = parser.parse_args()

    medians, r1s, r5s, r10s = [], [], [], []
    for seed in range(args.seeds):
        rng = make_rng(seed)
        images = [(f"i{j:05d}", rng.normal(size=args.dim)) for j in range(args.n)]
        captions = [(f"c{j:05d}", rng.normal(size=args.dim)) for j in range(args.n)]
        gt = {f"i{j:05d}": [f"c{j:05d}"] for j in range(args.n)}
        _, search = retrieval.rank_all(images, captions, gt)
        medians.append(retrieval.median_rank(search))
        r1s.append(retrieval.recall_at_k(search, 1))
        r5s.append(retrieval.recall_at_k(search, 5))
        r10s.append(retrieval.recall_at_k(search, 10))
        print(f"seed {seed:2d}: image-search Medr {medians[-1]:6.1f}  "
              f"R@1 {r1s[-1]:.2f}  R@5 {r5s[-1]:.2f}  R@10 {r10s[-1]:.2f}")

    print(f"\nover {args.seeds} seeds: "
          f"median rank mean {np.mean(medians):.1f} "
          f"(range {min(medians):.0f}..{max(medians):.0f}), "
          f"mean R@1 {np.mean(r1s):.2f}%  R@5 {np.mean(r5s):.2f}%  R@10 {np.mean(r10s):.2f}%")
    in_band = sum(450 <= m <= 550 for m in medians)
    print(f"medians inside [450, 550]: {in_band}/{args.seeds}")


if __name__ == "__main__":
    main()
