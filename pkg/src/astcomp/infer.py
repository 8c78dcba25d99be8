"""One-shot completion over a flattened AST prefix.

Shared by the CLI and the HTTP service: encode incoming (type, value,
parent) nodes with the checkpoint's vocabulary, build the graph the model
expects, run one forward pass, and rank candidates for both heads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .graph import graph_to_dict
from .model import Model, collate, graph_for_prefix, top_k
from .pipeline import EMPTY, SEGMENT_LENGTH, FlatNode, VocabError, Vocabulary
from .train import load_model

MAX_PREFIX = SEGMENT_LENGTH - 1


class PrefixError(ValueError):
    """Request prefix violates the input contract."""


@dataclass(slots=True)
class Completion:
    values: list[dict]
    types: list[dict]
    graph: dict | None
    model_info: dict


class Predictor:
    """Immutable bundle of model, vocabulary, and checkpoint identity."""

    def __init__(self, model: Model, vocab: Vocabulary, checkpoint_id: str):
        self.model = model
        self.vocab = vocab
        self.checkpoint_id = checkpoint_id

    @classmethod
    def from_checkpoint(cls, path: str) -> "Predictor":
        model, vocab, sidecar = load_model(path)
        return cls(model, vocab, sidecar["checkpoint_sha256"])

    def encode_prefix(self, nodes: list[dict]) -> list[FlatNode]:
        """Validate and encode request nodes.

        Unknown values map to UNK; unknown types are an error (the type
        vocabulary is closed-world). Parent indices must point backwards.
        """
        if not isinstance(nodes, list) or not nodes:
            raise PrefixError("prefix needs at least one node")
        if len(nodes) > MAX_PREFIX:
            raise PrefixError(f"prefix longer than {MAX_PREFIX} nodes")
        flat: list[FlatNode] = []
        for i, node in enumerate(nodes):
            if not isinstance(node, dict) or "type" not in node:
                raise PrefixError(f"node {i}: expected an object with a 'type' field")
            type_name = node["type"]
            try:
                type_id = self.vocab.encode_type(type_name)
            except VocabError as exc:
                raise PrefixError(f"node {i}: {exc.args[0]}") from None
            value = node.get("value")
            value_id = self.vocab.encode_value(EMPTY if value is None else str(value))
            parent = node.get("parent")
            if parent is not None:
                if not isinstance(parent, int) or not 0 <= parent < i:
                    raise PrefixError(f"node {i}: parent index {parent!r} must be in [0, {i})")
            flat.append(FlatNode(type_id, value_id, parent))
        return flat

    def complete(self, nodes: list[dict], top: int = 3, include_graph: bool = False) -> Completion:
        flat = self.encode_prefix(nodes)
        graph = graph_for_prefix(flat, target=None, graph_mode=self.model.config.graph_mode)
        batch = collate([graph], dtype=self.model.dtype)
        result = self.model.forward(batch)
        pv = ad.softmax(result.value_logits, axis=-1).data[0].astype(np.float64)
        pt = ad.softmax(result.type_logits, axis=-1).data[0].astype(np.float64)
        values = [
            {"value": self.vocab.decode_value(i), "probability": p}
            for i, p in top_k(pv, min(top, pv.shape[0]))
        ]
        types = [
            {"type": self.vocab.decode_type(i), "probability": p}
            for i, p in top_k(pt, min(top, pt.shape[0]))
        ]
        graph_doc = graph_to_dict(graph, self.vocab) if include_graph else None
        return Completion(
            values=values,
            types=types,
            graph=graph_doc,
            model_info={
                "checkpoint": self.checkpoint_id,
                "config_hash": self.model.config.config_hash(),
            },
        )
