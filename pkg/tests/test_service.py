"""HTTP endpoint contracts via the in-process test client."""

import json

import pytest
from fastapi.testclient import TestClient

from astcomp.cli import main
from astcomp.service import create_app


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("svc")
    corpus = tmp / "corpus.jsonl"
    corpus.write_text(json.dumps([
        {"type": "Module", "children": [1, 2]},
        {"type": "NameLoad", "value": "x"},
        {"type": "NameLoad", "value": "y"},
    ]) + "\n")
    assert main(["preprocess", "--input", str(corpus), "--out", str(tmp / "d"), "--k", "5"]) == 0
    assert main([
        "train", "--segments", str(tmp / "d" / "segments.jsonl"),
        "--vocab", str(tmp / "d" / "vocab.json"), "--out", str(tmp / "run"),
        "--epochs", "1", "--batch-size", "8", "--hidden", "8", "--blocks", "1",
        "--heads", "1", "--seed", "1",
    ]) == 0
    return str(tmp / "run" / "checkpoint.ckpt")


@pytest.fixture()
def client(checkpoint):
    return TestClient(create_app(checkpoint_path=checkpoint))


def prefix_nodes():
    return [
        {"type": "Module"},
        {"type": "NameLoad", "value": "x", "parent": 0},
    ]


class TestHealth:
    def test_before_load_is_503(self):
        bare = TestClient(create_app())
        resp = bare.get("/v1/health")
        assert resp.status_code == 503

    def test_after_load_is_200_with_three_fields(self, client):
        resp = client.get("/v1/health")
        assert resp.status_code == 200
        body = resp.json()
        assert set(body) == {"status", "checkpoint", "vocab_hashes"}
        assert body["status"] == "ready"
        assert set(body["vocab_hashes"]) == {"value", "type"}


class TestComplete:
    def test_returns_ranked_candidates(self, client):
        resp = client.post("/v1/complete", json={"nodes": prefix_nodes(), "top_k": 3})
        assert resp.status_code == 200
        body = resp.json()
        # list lengths are min(top_k, vocabulary size); the fixture has 2 types
        assert len(body["values"]) == 3 and len(body["types"]) == 2
        probs = [row["probability"] for row in body["values"]]
        assert probs == sorted(probs, reverse=True)
        assert body["model_info"]["checkpoint"]

    def test_empty_prefix_is_400(self, client):
        resp = client.post("/v1/complete", json={"nodes": []})
        assert resp.status_code == 400

    def test_unknown_type_is_400(self, client):
        resp = client.post("/v1/complete", json={"nodes": [{"type": "Bogus"}]})
        assert resp.status_code == 400

    def test_forward_parent_reference_is_400(self, client):
        resp = client.post("/v1/complete", json={
            "nodes": [{"type": "Module", "parent": 0}]
        })
        assert resp.status_code == 400

    def test_over_long_prefix_is_400(self, client):
        nodes = [{"type": "Module"}] + [
            {"type": "NameLoad", "value": "x", "parent": 0} for _ in range(49)
        ]
        resp = client.post("/v1/complete", json={"nodes": nodes})
        assert resp.status_code == 400

    def test_schema_violation_is_400(self, client):
        resp = client.post("/v1/complete", json={"nodes": [{"value": "x"}]})
        assert resp.status_code == 400

    def test_unknown_value_maps_to_unk_not_error(self, client):
        resp = client.post("/v1/complete", json={
            "nodes": [{"type": "Module"}, {"type": "NameLoad", "value": "neverseen", "parent": 0}]
        })
        assert resp.status_code == 200

    def test_include_graph_attaches_inspector_payload(self, client):
        resp = client.post("/v1/complete", json={
            "nodes": prefix_nodes(), "include_graph": True
        })
        body = resp.json()
        assert "graph" in body
        graph = body["graph"]
        assert {"nodes", "nn_edges", "pc_edges", "rightmost"} <= set(graph)
        assert graph["nodes"][0]["type"] == "Module"

    def test_graph_omitted_by_default(self, client):
        resp = client.post("/v1/complete", json={"nodes": prefix_nodes()})
        assert "graph" not in resp.json()

    def test_identical_requests_identical_responses(self, client):
        payload = {"nodes": prefix_nodes(), "top_k": 5}
        r1 = client.post("/v1/complete", json=payload).json()
        r2 = client.post("/v1/complete", json=payload).json()
        assert r1 == r2

    def test_complete_before_load_is_503(self):
        bare = TestClient(create_app())
        resp = bare.post("/v1/complete", json={"nodes": prefix_nodes()})
        assert resp.status_code == 503


class TestModelReload:
    def test_reload_with_identical_bytes_keeps_snapshot(self, checkpoint):
        app = create_app(checkpoint_path=checkpoint)
        holder = app.state.holder
        first = holder.get()
        again = holder.load(checkpoint)
        assert again is first

    def test_failed_load_keeps_previous_model(self, checkpoint, tmp_path):
        app = create_app(checkpoint_path=checkpoint)
        holder = app.state.holder
        first = holder.get()
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"garbage")
        with pytest.raises(Exception):
            holder.load(str(bad))
        assert holder.get() is first
