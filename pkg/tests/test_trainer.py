"""Training loop, evaluation semantics, checkpoint round-trips, ablations."""

import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from astcomp.model import Model, ModelConfig, collate
from astcomp.pipeline import (
    EMPTY_ID,
    UNK_ID,
    FlatNode,
    Segment,
    Vocabulary,
    write_segments,
    write_vocab,
)
from astcomp.train import (
    DatasetMismatch,
    TrainRunConfig,
    evaluate,
    evaluate_model,
    load_model,
    run_ablation_suite,
    save_model,
    train,
)


def tiny_vocab(values=8, types=4):
    return Vocabulary(
        values=["EMPTY", "UNK"] + [f"v{i}" for i in range(values - 2)],
        types=[f"t{i}" for i in range(types)],
        k=values - 2,
    )


def deterministic_segments(vocab, n=6, length=12, seed=0):
    rng = np.random.default_rng(seed)
    segs = []
    for si in range(n):
        nodes = []
        v = 2 + si % (vocab.value_size - 2)
        for pos in range(length):
            t = v % vocab.type_size
            parent = None if pos == 0 else pos - 1
            nodes.append(FlatNode(t, v, parent))
            v = 2 + (v * 3 + 1) % (vocab.value_size - 2)
        segs.append(Segment(nodes, f"s{si}", 0))
    return segs


@pytest.fixture
def dataset(tmp_path):
    vocab = tiny_vocab()
    segs = deterministic_segments(vocab)
    write_vocab(tmp_path / "vocab.json", vocab)
    write_segments(tmp_path / "segments.jsonl", segs, vocab)
    return tmp_path, vocab, segs


def run_config(tmp_path, vocab, **kw):
    model = ModelConfig(
        value_vocab_size=vocab.value_size,
        type_vocab_size=vocab.type_size,
        hidden=8,
        blocks=1,
        heads=2,
    )
    defaults = dict(
        segments_path=str(tmp_path / "segments.jsonl"),
        vocab_path=str(tmp_path / "vocab.json"),
        out_dir=str(tmp_path / "run"),
        model=model,
        epochs=2,
        batch_size=16,
        lr=1e-3,
        seed=7,
    )
    defaults.update(kw)
    return TrainRunConfig(**defaults)


class TestTrain:
    def test_zero_epochs_checkpoint_equals_initialization(self, dataset):
        tmp_path, vocab, _ = dataset
        cfg = run_config(tmp_path, vocab, epochs=0)
        result = train(cfg)
        assert result.epochs_run == 0
        assert result.final_report is not None  # evaluation still runs
        model, _, _ = load_model(result.checkpoint_path)
        fresh = Model(cfg.model, seed=cfg.seed, dtype=np.dtype(cfg.dtype))
        for name, p in fresh.params.items():
            np.testing.assert_array_equal(p.data, model.params[name].data)

    def test_same_seed_is_bit_identical(self, dataset):
        tmp_path, vocab, _ = dataset
        r1 = train(run_config(tmp_path, vocab, out_dir=str(tmp_path / "a")))
        r2 = train(run_config(tmp_path, vocab, out_dir=str(tmp_path / "b")))
        m1 = Path(r1.metrics_path).read_bytes()
        m2 = Path(r2.metrics_path).read_bytes()
        assert m1 == m2
        assert Path(r1.checkpoint_path).read_bytes() == Path(r2.checkpoint_path).read_bytes()

    def test_different_seeds_differ(self, dataset):
        tmp_path, vocab, _ = dataset
        r1 = train(run_config(tmp_path, vocab, out_dir=str(tmp_path / "a"), seed=1))
        r2 = train(run_config(tmp_path, vocab, out_dir=str(tmp_path / "b"), seed=2))
        assert Path(r1.checkpoint_path).read_bytes() != Path(r2.checkpoint_path).read_bytes()

    def test_metrics_track_task_scales(self, dataset):
        tmp_path, vocab, _ = dataset
        result = train(run_config(tmp_path, vocab))
        steps = [json.loads(line) for line in open(result.metrics_path)]
        train_steps = [s for s in steps if s["kind"] == "step"]
        assert train_steps
        for s in train_steps:
            assert np.isfinite(s["loss"])
            assert np.isfinite(s["log_sigma_value"]) and np.isfinite(s["log_sigma_type"])
        # the balancer moves once training starts
        assert train_steps[-1]["log_sigma_value"] != 0.0

    def test_vocab_mismatch_rejected(self, dataset, tmp_path):
        tmp_path_, vocab, segs = dataset
        other = tiny_vocab(values=9)
        write_vocab(tmp_path_ / "other_vocab.json", other)
        cfg = run_config(tmp_path_, vocab, vocab_path=str(tmp_path_ / "other_vocab.json"))
        with pytest.raises(DatasetMismatch):
            train(cfg)


class TestEvaluate:
    def test_always_empty_predictor_scores_empty_rate(self, dataset):
        tmp_path, vocab, segs = dataset
        cfg = ModelConfig(value_vocab_size=vocab.value_size,
                          type_vocab_size=vocab.type_size, hidden=8, blocks=1, heads=1)
        model = Model(cfg, seed=0, dtype=np.float64)
        # force the value head to always pick EMPTY and the type head to pick 0
        for name in model.params:
            if name.startswith("head."):
                model.params[name].data[:] = 0.0
        model.params["head.value.b"].data[EMPTY_ID] = 10.0
        model.params["head.type.b"].data[0] = 10.0
        report, log = evaluate_model(model, segs, collect_log=True)
        targets_v = [tv for tv, _, _, _ in log]
        targets_t = [tt for _, _, tt, _ in log]
        empty_rate = sum(t == EMPTY_ID for t in targets_v) / len(targets_v)
        type0_rate = sum(t == 0 for t in targets_t) / len(targets_t)
        assert report.value_accuracy == pytest.approx(empty_rate)
        assert report.type_accuracy == pytest.approx(type0_rate)

    def test_unk_prediction_scored_wrong_even_when_target_is_unk(self, dataset):
        tmp_path, vocab, _ = dataset
        segs = [Segment([FlatNode(0, UNK_ID, None), FlatNode(1, UNK_ID, 0)], "s", 0)]
        cfg = ModelConfig(value_vocab_size=vocab.value_size,
                          type_vocab_size=vocab.type_size, hidden=8, blocks=1, heads=1)
        model = Model(cfg, seed=0, dtype=np.float64)
        for name in model.params:
            if name.startswith("head."):
                model.params[name].data[:] = 0.0
        model.params["head.value.b"].data[UNK_ID] = 10.0
        strict, _ = evaluate_model(model, segs)
        lenient, _ = evaluate_model(model, segs, unk_correct=True)
        assert strict.value_accuracy == 0.0
        assert lenient.value_accuracy == 1.0

    def test_position_count_is_sum_of_segment_lengths_minus_one(self, dataset):
        tmp_path, vocab, segs = dataset
        cfg = ModelConfig(value_vocab_size=vocab.value_size,
                          type_vocab_size=vocab.type_size, hidden=8, blocks=1, heads=1)
        model = Model(cfg, seed=0, dtype=np.float64)
        report, _ = evaluate_model(model, segs)
        assert report.positions == sum(len(s) - 1 for s in segs)

    def test_accuracy_matches_recount_from_logs(self, dataset):
        tmp_path, vocab, segs = dataset
        cfg = ModelConfig(value_vocab_size=vocab.value_size,
                          type_vocab_size=vocab.type_size, hidden=8, blocks=1, heads=2)
        model = Model(cfg, seed=3, dtype=np.float64)
        report, log = evaluate_model(model, segs, collect_log=True)
        recount_v = sum(1 for tv, pv, _, _ in log if pv == tv and pv != UNK_ID)
        recount_t = sum(1 for _, _, tt, pt in log if pt == tt)
        assert report.value_correct == recount_v
        assert report.type_correct == recount_t
        assert len(log) == report.positions

    def test_empty_dataset_is_an_error(self, dataset):
        tmp_path, vocab, _ = dataset
        cfg = ModelConfig(value_vocab_size=vocab.value_size,
                          type_vocab_size=vocab.type_size, hidden=8, blocks=1, heads=1)
        model = Model(cfg, seed=0, dtype=np.float64)
        with pytest.raises(ValueError, match="no prediction positions"):
            evaluate_model(model, [])

    def test_evaluate_checkpoint_roundtrip_is_bit_identical(self, dataset):
        tmp_path, vocab, segs = dataset
        result = train(run_config(tmp_path, vocab))
        r1 = evaluate(result.checkpoint_path, str(tmp_path / "segments.jsonl"))
        r2 = evaluate(result.checkpoint_path, str(tmp_path / "segments.jsonl"))
        assert r1 == r2

    def test_evaluate_rejects_foreign_dataset(self, dataset, tmp_path):
        tmp_path_, vocab, segs = dataset
        result = train(run_config(tmp_path_, vocab))
        other = tiny_vocab(values=12)
        write_vocab(tmp_path_ / "v2.json", other)
        write_segments(tmp_path_ / "s2.jsonl", deterministic_segments(other), other)
        with pytest.raises(DatasetMismatch):
            evaluate(result.checkpoint_path, str(tmp_path_ / "s2.jsonl"))


class TestCheckpointIdentity:
    def test_save_load_preserves_model_and_vocab(self, dataset, tmp_path):
        tmp_path_, vocab, _ = dataset
        cfg = ModelConfig(value_vocab_size=vocab.value_size,
                          type_vocab_size=vocab.type_size, hidden=8, blocks=1, heads=1)
        model = Model(cfg, seed=5, dtype=np.float64)
        path = tmp_path / "m.ckpt"
        save_model(path, model, vocab, seed=5)
        loaded, got_vocab, sidecar = load_model(path)
        assert loaded.config == cfg
        assert got_vocab.values == vocab.values
        assert sidecar["config_hash"] == cfg.config_hash()

    def test_tampered_checkpoint_refused(self, dataset, tmp_path):
        tmp_path_, vocab, _ = dataset
        cfg = ModelConfig(value_vocab_size=vocab.value_size,
                          type_vocab_size=vocab.type_size, hidden=8, blocks=1, heads=1)
        model = Model(cfg, seed=5, dtype=np.float64)
        path = tmp_path / "m.ckpt"
        save_model(path, model, vocab, seed=5)
        blob = bytearray(path.read_bytes())
        blob[-1] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(ValueError, match="refusing to load"):
            load_model(path)


class TestAblations:
    def test_variant_subset_runs_exactly_those(self, dataset):
        tmp_path, vocab, _ = dataset
        base = run_config(tmp_path, vocab, epochs=1, out_dir=str(tmp_path / "ab"))
        rows = run_ablation_suite(base, variants=["ng", "gs"], out_dir=tmp_path / "ab")
        assert [r.variant for r in rows] == ["ng", "gs"]
        csv = (tmp_path / "ab" / "ablation.csv").read_text()
        assert csv.count("\n") == 3  # header + two rows

    def test_unknown_variant_rejected(self, dataset):
        tmp_path, vocab, _ = dataset
        base = run_config(tmp_path, vocab, epochs=1)
        with pytest.raises(ValueError, match="unknown ablation variants"):
            run_ablation_suite(base, variants=["nope"])

    def test_variant_overrides_reach_the_model(self, dataset):
        tmp_path, vocab, _ = dataset
        base = run_config(tmp_path, vocab, epochs=0, out_dir=str(tmp_path / "ab2"))
        rows = run_ablation_suite(base, variants=["g", "n"], out_dir=tmp_path / "ab2")
        g_model, _, _ = load_model(tmp_path / "ab2" / "g" / "checkpoint.ckpt")
        assert g_model.config.graph_mode == "original-ast"
        n_model, _, _ = load_model(tmp_path / "ab2" / "n" / "checkpoint.ckpt")
        assert n_model.config.use_uncertainty_weighting is False
