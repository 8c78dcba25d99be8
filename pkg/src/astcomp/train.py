"""Training loop over encoded segments, accuracy evaluation, checkpointing,
and the ablation-variant driver.

One training sample is a (segment, position) pair: the graph of the first
r-1 nodes predicts the value and type of node r (1-based, r from 2 to the
segment length). Samples are shuffled each epoch, then grouped into windows
sorted by prefix length so batches pad to similar node counts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .model import Model, ModelConfig, collate, graph_for_prefix
from .pipeline import (
    UNK_ID,
    Segment,
    Vocabulary,
    load_vocab,
    read_segments,
)

CHECKPOINT_NAME = "checkpoint.ckpt"
BEST_CHECKPOINT_NAME = "best.ckpt"
METRICS_NAME = "metrics.jsonl"


class TrainingDiverged(RuntimeError):
    """Raised when the loss or a gradient stops being finite."""


class DatasetMismatch(ValueError):
    """Checkpoint and dataset disagree on vocabulary hashes."""


@dataclass
class TrainRunConfig:
    segments_path: str
    vocab_path: str
    out_dir: str
    model: ModelConfig
    epochs: int = 30
    batch_size: int = 128
    lr: float = 1e-3
    lr_decay: float | None = None  # per-epoch multiplier, off by default
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float | None = 5.0
    seed: int = 0
    dtype: str = "float32"
    eval_every: int = 1
    eval_segments_path: str | None = None  # defaults to the training data
    unk_correct: bool = False
    keep_best: bool = False
    stop_at_accuracy: float | None = None  # stop once both accuracies reach it

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


@dataclass(slots=True)
class EvalReport:
    value_accuracy: float
    type_accuracy: float
    positions: int
    value_correct: int
    type_correct: int

    def to_dict(self) -> dict:
        return {
            "value_accuracy": self.value_accuracy,
            "type_accuracy": self.type_accuracy,
            "positions": self.positions,
            "value_correct": self.value_correct,
            "type_correct": self.type_correct,
        }


@dataclass
class TrainResult:
    checkpoint_path: str
    sidecar_path: str
    metrics_path: str
    reports: list[tuple[int, EvalReport]]
    final_report: EvalReport | None
    epochs_run: int
    epoch_losses: list[float] = field(default_factory=list)
    log_sigma_value: list[float] = field(default_factory=list)
    log_sigma_type: list[float] = field(default_factory=list)


def _samples_of(segments: list[Segment]) -> list[tuple[int, int]]:
    """(segment index, 1-based target position r) for every r in 2..l."""
    return [(si, r) for si, seg in enumerate(segments) for r in range(2, len(seg) + 1)]


def _make_graph(seg: Segment, r: int, graph_mode: str):
    target_node = seg.nodes[r - 1]
    return graph_for_prefix(
        seg.nodes[: r - 1],
        target=(target_node.value_id, target_node.type_id),
        graph_mode=graph_mode,
    )


def _bucketed_batches(
    order: np.ndarray,
    samples: list[tuple[int, int]],
    batch_size: int,
    window_batches: int = 16,
) -> list[list[tuple[int, int]]]:
    """Cut the shuffled order into windows, sort each window by prefix length,
    then slice batches. Keeps padding tight without losing shuffle entropy."""
    batches: list[list[tuple[int, int]]] = []
    window = batch_size * window_batches
    for start in range(0, len(order), window):
        chunk = sorted(order[start : start + window], key=lambda i: (samples[i][1], i))
        for b in range(0, len(chunk), batch_size):
            batches.append([samples[i] for i in chunk[b : b + batch_size]])
    return batches


def _verify_dataset(header: dict, vocab: Vocabulary, model_config: ModelConfig, path) -> None:
    if header.get("value_vocab_hash") != vocab.value_hash() or header.get(
        "type_vocab_hash"
    ) != vocab.type_hash():
        raise DatasetMismatch(f"{path}: dataset was encoded with a different vocabulary")
    if model_config.value_vocab_size != vocab.value_size:
        raise DatasetMismatch(
            f"model expects {model_config.value_vocab_size} values, vocabulary has {vocab.value_size}"
        )
    if model_config.type_vocab_size != vocab.type_size:
        raise DatasetMismatch(
            f"model expects {model_config.type_vocab_size} types, vocabulary has {vocab.type_size}"
        )


def sidecar_document(model: Model, vocab: Vocabulary, checkpoint_sha: str, seed: int) -> dict:
    return {
        "format": "astcomp-checkpoint-meta",
        "version": 1,
        "model_config": model.config.to_dict(),
        "config_hash": model.config.config_hash(),
        "checkpoint_sha256": checkpoint_sha,
        "seed": seed,
        "dtype": str(model.dtype),
        "value_vocab_hash": vocab.value_hash(),
        "type_vocab_hash": vocab.type_hash(),
        "vocab": {"values": vocab.values, "types": vocab.types, "k": vocab.k},
    }


def save_model(path: str | Path, model: Model, vocab: Vocabulary, seed: int) -> tuple[str, str]:
    """Checkpoint plus a JSON sidecar that makes it self-describing."""
    path = str(path)
    sha = ad.save_checkpoint(
        path,
        model.params,
        seed,
        extra={"model_config": model.config.to_dict(), "dtype": str(model.dtype)},
    )
    sidecar_path = path + ".json"
    doc = sidecar_document(model, vocab, sha, seed)
    Path(sidecar_path).write_text(json.dumps(doc, ensure_ascii=False), encoding="utf-8")
    return path, sidecar_path


def load_model(path: str | Path) -> tuple[Model, Vocabulary, dict]:
    """Rebuild a Model and its Vocabulary from checkpoint + sidecar."""
    path = str(path)
    sidecar_path = path + ".json"
    doc = json.loads(Path(sidecar_path).read_text(encoding="utf-8"))
    if doc.get("format") != "astcomp-checkpoint-meta":
        raise ValueError(f"{sidecar_path}: not a checkpoint sidecar")
    actual = ad.file_sha256(path)
    if actual != doc["checkpoint_sha256"]:
        raise ValueError(
            f"{path}: checkpoint bytes do not match the sidecar hash (refusing to load)"
        )
    params, seed, extra = ad.load_checkpoint(path)
    config = ModelConfig.from_dict(extra["model_config"])
    dtype = np.dtype(extra.get("dtype", "float32"))
    model = Model(config, params=params, dtype=dtype)
    vocab = Vocabulary(
        values=doc["vocab"]["values"], types=doc["vocab"]["types"], k=doc["vocab"]["k"]
    )
    return model, vocab, doc


def evaluate_model(
    model: Model,
    segments: list[Segment],
    batch_size: int = 256,
    unk_correct: bool = False,
    collect_log: bool = False,
) -> tuple[EvalReport, list[tuple[int, int, int, int]]]:
    """Argmax accuracy over every prediction position.

    A value prediction of UNK counts as wrong even when the target is UNK,
    unless unk_correct is set. Types match by exact id.
    """
    samples = _samples_of(segments)
    if not samples:
        raise ValueError("dataset has no prediction positions")
    order = np.arange(len(samples))
    value_correct = 0
    type_correct = 0
    log: list[tuple[int, int, int, int]] = []
    for batch_samples in _bucketed_batches(order, samples, batch_size):
        graphs = [_make_graph(segments[si], r, model.config.graph_mode) for si, r in batch_samples]
        batch = collate(graphs, dtype=model.dtype)
        pv, pt = model.predict_probs(batch)
        pred_v = pv.argmax(axis=-1)
        pred_t = pt.argmax(axis=-1)
        tv = batch.target_values
        tt = batch.target_types
        ok_v = (pred_v == tv) if unk_correct else ((pred_v == tv) & (pred_v != UNK_ID))
        ok_t = pred_t == tt
        value_correct += int(ok_v.sum())
        type_correct += int(ok_t.sum())
        if collect_log:
            log.extend(
                (int(a), int(b), int(c), int(d))
                for a, b, c, d in zip(tv, pred_v, tt, pred_t)
            )
    total = len(samples)
    report = EvalReport(
        value_accuracy=value_correct / total,
        type_accuracy=type_correct / total,
        positions=total,
        value_correct=value_correct,
        type_correct=type_correct,
    )
    return report, log


def evaluate(checkpoint_path: str, segments_path: str, unk_correct: bool = False) -> EvalReport:
    """Evaluate a stored checkpoint against an encoded dataset."""
    model, vocab, _ = load_model(checkpoint_path)
    header, segments = read_segments(segments_path)
    _verify_dataset(header, vocab, model.config, segments_path)
    report, _ = evaluate_model(model, segments, unk_correct=unk_correct)
    return report


def train(config: TrainRunConfig) -> TrainResult:
    header, segments = read_segments(config.segments_path)
    vocab = load_vocab(config.vocab_path)
    _verify_dataset(header, vocab, config.model, config.segments_path)

    eval_segments = segments
    if config.eval_segments_path:
        eval_header, eval_segments = read_segments(config.eval_segments_path)
        _verify_dataset(eval_header, vocab, config.model, config.eval_segments_path)

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / METRICS_NAME
    checkpoint_path = out_dir / CHECKPOINT_NAME

    dtype = np.dtype(config.dtype)
    model = Model(config.model, seed=config.seed, dtype=dtype)
    params = model.parameters()
    samples = _samples_of(segments)
    if not samples:
        raise ValueError(f"{config.segments_path}: no prediction positions (all segments of length 1?)")

    rng = np.random.default_rng(config.seed)
    reports: list[tuple[int, EvalReport]] = []
    epoch_losses: list[float] = []
    sig_v_track: list[float] = []
    sig_t_track: list[float] = []
    best_value_acc = -1.0
    lr = config.lr
    step = 0
    epochs_run = 0

    with open(metrics_path, "w", encoding="utf-8") as metrics:

        def emit(record: dict) -> None:
            metrics.write(json.dumps(record) + "\n")

        def run_eval(epoch: int) -> EvalReport:
            report, _ = evaluate_model(
                model, eval_segments, batch_size=config.batch_size * 2,
                unk_correct=config.unk_correct,
            )
            reports.append((epoch, report))
            emit({"kind": "eval", "epoch": epoch, **report.to_dict()})
            return report

        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(len(samples))
            epoch_loss = 0.0
            for batch_samples in _bucketed_batches(order, samples, config.batch_size):
                graphs = [
                    _make_graph(segments[si], r, config.model.graph_mode)
                    for si, r in batch_samples
                ]
                batch = collate(graphs, dtype=dtype)
                loss, loss_v, loss_t = model.batch_loss(batch)
                loss_val = loss.item()
                if not math.isfinite(loss_val):
                    dump = out_dir / f"diverged-epoch{epoch}-step{step}.json"
                    dump.write_text(json.dumps({
                        "epoch": epoch,
                        "step": step,
                        "loss": loss_val,
                        "loss_value": loss_v.item(),
                        "loss_type": loss_t.item(),
                        "samples": batch_samples,
                    }))
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch} step {step}; batch dumped to {dump}"
                    )
                ad.zero_grads(params)
                ad.backward(loss)
                if config.clip_norm is not None:
                    ad.clip_global_norm(params, config.clip_norm)
                ad.adam_step(
                    params, lr=lr,
                    beta1=config.adam_beta1, beta2=config.adam_beta2, eps=config.adam_eps,
                )
                step += 1
                sig_v = model.params["loss.log_sigma_value"].item()
                sig_t = model.params["loss.log_sigma_type"].item()
                epoch_loss += loss_val
                emit({
                    "kind": "step",
                    "epoch": epoch,
                    "step": step,
                    "batch_graphs": len(batch_samples),
                    "loss": loss_val,
                    "loss_value": loss_v.item(),
                    "loss_type": loss_t.item(),
                    "log_sigma_value": sig_v,
                    "log_sigma_type": sig_t,
                })
            epochs_run = epoch
            epoch_losses.append(epoch_loss)
            sig_v_track.append(model.params["loss.log_sigma_value"].item())
            sig_t_track.append(model.params["loss.log_sigma_type"].item())
            if config.lr_decay is not None:
                lr *= config.lr_decay

            if epoch % config.eval_every == 0 or epoch == config.epochs:
                report = run_eval(epoch)
                save_model(checkpoint_path, model, vocab, config.seed)
                if config.keep_best and report.value_accuracy > best_value_acc:
                    best_value_acc = report.value_accuracy
                    save_model(out_dir / BEST_CHECKPOINT_NAME, model, vocab, config.seed)
                if (
                    config.stop_at_accuracy is not None
                    and report.value_accuracy >= config.stop_at_accuracy
                    and report.type_accuracy >= config.stop_at_accuracy
                ):
                    break

        final_report = reports[-1][1] if reports and reports[-1][0] == epochs_run else run_eval(epochs_run)
        _, sidecar_path = save_model(checkpoint_path, model, vocab, config.seed)

    return TrainResult(
        checkpoint_path=str(checkpoint_path),
        sidecar_path=sidecar_path,
        metrics_path=str(metrics_path),
        reports=reports,
        final_report=final_report,
        epochs_run=epochs_run,
        epoch_losses=epoch_losses,
        log_sigma_value=sig_v_track,
        log_sigma_type=sig_t_track,
    )


# ---------------------------------------------------------------------------
# ablation variants

VARIANTS: dict[str, dict] = {
    "full": {},
    "g": {"graph_mode": "original-ast"},
    "n": {"use_uncertainty_weighting": False},
    "b": {
        "graph_mode": "original-ast",
        "use_uncertainty_weighting": False,
        "use_parent_attention": False,
        "use_residual": False,
    },
    "p": {"use_parent_attention": False},
    "r": {"use_residual": False},
    "ng": {"use_neighbor_attention": False},
    "gs": {"use_global_attention": False},
    "pe": {"use_positions": False},
}

VARIANT_LABELS: dict[str, str] = {
    "full": "full model",
    "g": "graph over original partial AST",
    "n": "fixed task weights",
    "b": "bare (original AST, fixed weights, no parent layer, no residual)",
    "p": "no parent attention",
    "r": "no residual connection",
    "ng": "no neighbor attention",
    "gs": "no global attention",
    "pe": "no position encoding",
}


@dataclass(slots=True)
class AblationRow:
    variant: str
    label: str
    report: EvalReport


def run_ablation_suite(
    base: TrainRunConfig,
    variants: list[str] | None = None,
    out_dir: str | Path | None = None,
) -> list[AblationRow]:
    """One training run per variant at the same budget; reports final accuracy."""
    names = list(VARIANTS) if variants is None else list(variants)
    unknown = [v for v in names if v not in VARIANTS]
    if unknown:
        raise ValueError(f"unknown ablation variants: {unknown} (choose from {sorted(VARIANTS)})")
    root = Path(out_dir) if out_dir is not None else Path(base.out_dir)
    root.mkdir(parents=True, exist_ok=True)

    rows: list[AblationRow] = []
    for name in names:
        cfg = replace(
            base,
            model=base.model.with_overrides(**VARIANTS[name]),
            out_dir=str(root / name),
        )
        result = train(cfg)
        rows.append(AblationRow(name, VARIANT_LABELS[name], result.final_report))

    write_ablation_table(rows, root)
    return rows


def write_ablation_table(rows: list[AblationRow], out_dir: str | Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    csv_path = out_dir / "ablation.csv"
    md_path = out_dir / "ablation.md"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("variant,label,value_accuracy,type_accuracy,positions\n")
        for row in rows:
            fh.write(
                f"{row.variant},\"{row.label}\",{row.report.value_accuracy:.6f},"
                f"{row.report.type_accuracy:.6f},{row.report.positions}\n"
            )
    with open(md_path, "w", encoding="utf-8") as fh:
        fh.write("| variant | label | value acc | type acc |\n")
        fh.write("|---|---|---|---|\n")
        for row in rows:
            fh.write(
                f"| {row.variant} | {row.label} | {row.report.value_accuracy:.2%} "
                f"| {row.report.type_accuracy:.2%} |\n"
            )
    return csv_path, md_path
