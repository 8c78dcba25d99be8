#!/usr/bin/env python3
"""Train every ablation variant on the toy corpus at an equal budget and
print the comparison table."""

import argparse

from astcomp.model import ModelConfig
from astcomp.pipeline import load_vocab
from astcomp.toydata import make_toy_dataset
from astcomp.train import TrainRunConfig, run_ablation_suite


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="runs/ablation")
    parser.add_argument("--epochs", type=int, default=12)
    parser.add_argument("--hidden", type=int, default=32)
    parser.add_argument("--lr", type=float, default=2e-3)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--variants", default=None, help="comma-separated subset")
    args = parser.parse_args()

    segments_path, vocab_path = make_toy_dataset(f"{args.workdir}/data", seed=args.seed)
    vocab = load_vocab(vocab_path)
    base = TrainRunConfig(
        segments_path=str(segments_path),
        vocab_path=str(vocab_path),
        out_dir=f"{args.workdir}/runs",
        model=ModelConfig(
            value_vocab_size=vocab.value_size,
            type_vocab_size=vocab.type_size,
            hidden=args.hidden,
        ),
        epochs=args.epochs,
        lr=args.lr,
        seed=args.seed,
        eval_every=max(args.epochs, 1),
    )
    variants = args.variants.split(",") if args.variants else None
    rows = run_ablation_suite(base, variants=variants, out_dir=f"{args.workdir}/runs")
    for row in sorted(rows, key=lambda r: -r.report.value_accuracy):
        print(
            f"{row.variant:>4}  value {row.report.value_accuracy:.4f}  "
            f"type {row.report.type_accuracy:.4f}  ({row.label})"
        )


if __name__ == "__main__":
    main()
