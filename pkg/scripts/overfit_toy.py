#!/usr/bin/env python3
"""Overfit-sanity experiment: train the full model on the toy corpus and
report when training accuracy crosses the target."""

import argparse
import time

from astcomp.model import ModelConfig
from astcomp.pipeline import load_vocab
from astcomp.toydata import make_toy_dataset
from astcomp.train import TrainRunConfig, train


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="runs/overfit")
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--hidden", type=int, default=32)
    parser.add_argument("--lr", type=float, default=2e-3)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--target", type=float, default=0.95)
    args = parser.parse_args()

    segments_path, vocab_path = make_toy_dataset(f"{args.workdir}/data", seed=args.seed)
    vocab = load_vocab(vocab_path)
    config = TrainRunConfig(
        segments_path=str(segments_path),
        vocab_path=str(vocab_path),
        out_dir=f"{args.workdir}/run",
        model=ModelConfig(
            value_vocab_size=vocab.value_size,
            type_vocab_size=vocab.type_size,
            hidden=args.hidden,
        ),
        epochs=args.epochs,
        lr=args.lr,
        seed=args.seed,
        stop_at_accuracy=args.target,
    )
    started = time.time()
    result = train(config)
    elapsed = time.time() - started
    for epoch, report in result.reports:
        print(f"epoch {epoch:3d}: value {report.value_accuracy:.4f} type {report.type_accuracy:.4f}")
    final = result.final_report
    reached = final.value_accuracy >= args.target and final.type_accuracy >= args.target
    print(
        f"{'reached' if reached else 'missed'} {args.target:.0%} after "
        f"{result.epochs_run} epochs in {elapsed:.0f}s"
    )


if __name__ == "__main__":
    main()
