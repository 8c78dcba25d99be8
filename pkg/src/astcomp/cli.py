"""Command-line entry point wiring the whole pipeline.

Subcommands: preprocess, train, eval, ablate, complete, serve. Exit code 0
on success, 1 on operational failure, 2 on usage errors. The only
environment variable read is ASTCOMP_LOG (log level).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .model import GRAPH_MODE_FLATTENED, GRAPH_MODE_ORIGINAL_AST, ModelConfig
from .pipeline import load_vocab, preprocess_corpus
from .train import (
    VARIANTS,
    TrainRunConfig,
    evaluate,
    run_ablation_suite,
    train,
)

log = logging.getLogger("astcomp")


def _model_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--hidden", type=int, default=128, help="hidden size d")
    p.add_argument("--blocks", type=int, default=2, help="number of stacked attention blocks")
    p.add_argument("--heads", type=int, default=4, help="neighbor-attention heads per block")
    p.add_argument("--graph-mode", choices=[GRAPH_MODE_FLATTENED, GRAPH_MODE_ORIGINAL_AST],
                   default=GRAPH_MODE_FLATTENED)
    p.add_argument("--no-neighbor-attention", action="store_true")
    p.add_argument("--no-global-attention", action="store_true")
    p.add_argument("--no-parent-attention", action="store_true")
    p.add_argument("--no-residual", action="store_true")
    p.add_argument("--no-positions", action="store_true")
    p.add_argument("--fixed-task-weights", action="store_true",
                   help="disable uncertainty weighting (both task weights fixed to 1)")


def _model_config_from(args, vocab) -> ModelConfig:
    return ModelConfig(
        value_vocab_size=vocab.value_size,
        type_vocab_size=vocab.type_size,
        hidden=args.hidden,
        blocks=args.blocks,
        heads=args.heads,
        use_neighbor_attention=not args.no_neighbor_attention,
        use_global_attention=not args.no_global_attention,
        use_parent_attention=not args.no_parent_attention,
        use_residual=not args.no_residual,
        use_positions=not args.no_positions,
        use_uncertainty_weighting=not args.fixed_task_weights,
        graph_mode=args.graph_mode,
    )


def _train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--segments", required=True, help="encoded segments file")
    p.add_argument("--vocab", required=True, help="vocabulary file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lr-decay", type=float, default=None,
                   help="per-epoch learning-rate multiplier (off by default)")
    p.add_argument("--clip-norm", type=float, default=5.0,
                   help="global gradient-norm clip; pass 0 to disable")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    p.add_argument("--eval-every", type=int, default=1)
    p.add_argument("--eval-segments", default=None,
                   help="dataset for evaluation (default: the training segments)")
    p.add_argument("--unk-correct", action="store_true",
                   help="count a value prediction of UNK as correct when the target is UNK")
    p.add_argument("--keep-best", action="store_true")
    p.add_argument("--stop-at-accuracy", type=float, default=None,
                   help="stop once value and type accuracy both reach this fraction")
    _model_config_args(p)


def _train_config_from(args) -> TrainRunConfig:
    vocab = load_vocab(args.vocab)
    return TrainRunConfig(
        segments_path=args.segments,
        vocab_path=args.vocab,
        out_dir=args.out,
        model=_model_config_from(args, vocab),
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        lr_decay=args.lr_decay,
        clip_norm=args.clip_norm if args.clip_norm else None,
        seed=args.seed,
        dtype=args.dtype,
        eval_every=args.eval_every,
        eval_segments_path=args.eval_segments,
        unk_correct=args.unk_correct,
        keep_best=args.keep_best,
        stop_at_accuracy=args.stop_at_accuracy,
    )


def cmd_preprocess(args) -> int:
    stats = preprocess_corpus(args.input, args.out, args.k)
    print(f"files:          {stats['num_files']}")
    print(f"nodes:          {stats['num_nodes']}")
    print(f"segments:       {stats['num_segments']}")
    print(f"value vocab:    {stats['value_vocab_size']} (k={stats['k']})")
    print(f"type vocab:     {stats['type_vocab_size']}")
    print(f"unk rate:       {stats['unk_rate']:.4f}")
    print(f"wrote {Path(args.out) / 'vocab.json'} and {Path(args.out) / 'segments.jsonl'}")
    return 0


def cmd_train(args) -> int:
    result = train(_train_config_from(args))
    report = result.final_report
    print(f"epochs run:     {result.epochs_run}")
    print(f"value accuracy: {report.value_accuracy:.4f}")
    print(f"type accuracy:  {report.type_accuracy:.4f}")
    print(f"checkpoint:     {result.checkpoint_path}")
    print(f"metrics:        {result.metrics_path}")
    return 0


def cmd_eval(args) -> int:
    report = evaluate(args.checkpoint, args.segments, unk_correct=args.unk_correct)
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def cmd_ablate(args) -> int:
    base = _train_config_from(args)
    variants = args.variants.split(",") if args.variants else None
    rows = run_ablation_suite(base, variants=variants, out_dir=args.out)
    width = max(len(r.label) for r in rows)
    for row in rows:
        print(
            f"{row.variant:>4}  {row.label:<{width}}  "
            f"value {row.report.value_accuracy:.4f}  type {row.report.type_accuracy:.4f}"
        )
    print(f"table: {Path(args.out) / 'ablation.csv'}")
    return 0


def cmd_complete(args) -> int:
    from .infer import Predictor

    doc = json.loads(Path(args.ast_prefix).read_text(encoding="utf-8"))
    nodes = doc["nodes"] if isinstance(doc, dict) else doc
    predictor = Predictor.from_checkpoint(args.checkpoint)
    completion = predictor.complete(nodes, top=args.top_k, include_graph=args.include_graph)
    print("values:")
    for row in completion.values:
        print(f"  {row['value']:<24} {row['probability']:.6f}")
    print("types:")
    for row in completion.types:
        print(f"  {row['type']:<24} {row['probability']:.6f}")
    if completion.graph is not None:
        print(json.dumps(completion.graph, indent=2))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(
        checkpoint_path=args.checkpoint,
        cors_origins=args.cors_origin or None,
        playground_dir=args.playground_dir,
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="astcomp",
        description="Graph-attention code completion over flattened ASTs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="encode an AST corpus into segments + vocabulary")
    p.add_argument("--input", required=True, help="one JSON AST array per line")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--k", type=int, required=True, help="value-vocabulary budget")
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("train", help="train a model on encoded segments")
    _train_args(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--segments", required=True)
    p.add_argument("--unk-correct", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare ablation variants")
    _train_args(p)
    p.add_argument("--variants", default=None,
                   help=f"comma-separated subset of {','.join(VARIANTS)} (default: all)")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("complete", help="one-shot completion for an AST prefix")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ast-prefix", required=True, help="JSON file with the flattened prefix nodes")
    p.add_argument("--top-k", type=int, default=3)
    p.add_argument("--include-graph", action="store_true")
    p.set_defaults(fn=cmd_complete)

    p = sub.add_parser("serve", help="run the HTTP completion service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--port", type=int, default=8750)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--cors-origin", action="append", default=None,
                   help="allowed CORS origin (repeatable; default: any)")
    p.add_argument("--playground-dir", default=None,
                   help="serve this directory of static playground assets at /")
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("ASTCOMP_LOG", "WARNING").upper())
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except KeyboardInterrupt:
        return 130
    except Exception as exc:  # operational failures exit 1 with a message
        log.debug("command failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
