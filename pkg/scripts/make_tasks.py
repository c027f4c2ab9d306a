#!/usr/bin/env python3
"""Emit a line-delimited JSON task file of seeded retrieval/tracking instances."""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from mixkv.taskgen import gen_niah, gen_vt, save_tasks  # noqa: E402


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out", help="output .jsonl path")
    parser.add_argument("--n-niah", type=int, default=50)
    parser.add_argument("--n-vt", type=int, default=50)
    parser.add_argument("--length", type=int, default=256)
    parser.add_argument("--needles", type=int, default=1)
    parser.add_argument("--chains", type=int, default=2)
    parser.add_argument("--chain-len", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    instances = []
    for s in range(args.n_niah):
        depths = tuple((i + 1) / (args.needles + 1) for i in range(args.needles))
        instances.append(
            gen_niah(args.length, args.needles, depths, seed=args.seed * 10_000 + s)
        )
    for s in range(args.n_vt):
        instances.append(
            gen_vt(args.chains, args.chain_len, args.length, seed=args.seed * 10_000 + s)
        )
    save_tasks(instances, args.out)
    print(f"wrote {len(instances)} instances to {args.out}")


if __name__ == "__main__":
    main()
