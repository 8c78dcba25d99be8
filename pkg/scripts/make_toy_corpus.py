#!/usr/bin/env python3
"""Generate the synthetic segment corpus used by the desk-scale experiments."""

import argparse

from astcomp.toydata import make_toy_dataset


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--segments", type=int, default=200)
    parser.add_argument("--length", type=int, default=50)
    parser.add_argument("--values", type=int, default=200)
    parser.add_argument("--types", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--noise", type=float, default=0.015)
    parser.add_argument("--chain-parent-prob", type=float, default=0.85)
    parser.add_argument("--context-classes", type=int, default=8)
    parser.add_argument("--restart-prob", type=float, default=0.12)
    parser.add_argument("--fresh-skew", type=float, default=0.5)
    args = parser.parse_args()

    segments_path, vocab_path = make_toy_dataset(
        args.out,
        num_segments=args.segments,
        segment_length=args.length,
        num_values=args.values,
        num_types=args.types,
        seed=args.seed,
        noise=args.noise,
        chain_parent_prob=args.chain_parent_prob,
        context_classes=args.context_classes,
        restart_prob=args.restart_prob,
        fresh_skew=args.fresh_skew,
    )
    print(f"wrote {segments_path}")
    print(f"wrote {vocab_path}")


if __name__ == "__main__":
    main()
