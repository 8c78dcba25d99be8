"""Merged-node graph construction from the flattened prefix of a segment.

Every unique (type_id, value_id) pair becomes one node. Undirected node-node
edges count how often the two keys sit next to each other in the sequence;
directed parent-child edges recover the tree structure; each node records the
distance from its last occurrence to the right-most sequence element.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .pipeline import FlatNode, Vocabulary


@dataclass(slots=True)
class AstGraph:
    """Immutable snapshot of a prefix as a graph.

    keys are in first-occurrence order. nn_edges maps an ordered index pair
    (i <= j) to its adjacency count; a pair with i == j records two adjacent
    sequence elements merging to the same key. Parent-child edges are
    directed (parent, child) and unweighted. target, when present, is the
    (value_id, type_id) of the node that follows the prefix.
    """

    keys: list[tuple[int, int]]
    nn_edges: dict[tuple[int, int], int]
    pc_edges: set[tuple[int, int]]
    positions: list[int]
    rightmost: int
    target: tuple[int, int] | None = None

    @property
    def num_nodes(self) -> int:
        return len(self.keys)


class GraphBuilder:
    """Incremental builder: append sequence elements one at a time.

    graph() snapshots the current state, so the per-position training loop
    can reuse one builder per segment instead of rebuilding each prefix.
    """

    def __init__(self) -> None:
        self._keys: list[tuple[int, int]] = []
        self._key_to_idx: dict[tuple[int, int], int] = {}
        self._last_occurrence: list[int] = []
        self._nn: dict[tuple[int, int], int] = {}
        self._pc: set[tuple[int, int]] = set()
        self._node_of_position: list[int] = []
        self._length = 0

    def __len__(self) -> int:
        return self._length

    def append(self, node: FlatNode) -> None:
        key = (node.type_id, node.value_id)
        idx = self._key_to_idx.get(key)
        if idx is None:
            idx = len(self._keys)
            self._key_to_idx[key] = idx
            self._keys.append(key)
            self._last_occurrence.append(0)
        self._last_occurrence[idx] = self._length

        if self._length > 0:
            prev = self._node_of_position[-1]
            edge = (prev, idx) if prev <= idx else (idx, prev)
            self._nn[edge] = self._nn.get(edge, 0) + 1
        if node.parent_pos is not None:
            if not 0 <= node.parent_pos < self._length:
                raise ValueError(
                    f"parent position {node.parent_pos} outside prefix of length {self._length}"
                )
            self._pc.add((self._node_of_position[node.parent_pos], idx))

        self._node_of_position.append(idx)
        self._length += 1

    def graph(self, target: tuple[int, int] | None = None) -> AstGraph:
        if self._length == 0:
            raise ValueError("cannot build a graph from an empty prefix")
        last = self._length - 1
        positions = [last - occ for occ in self._last_occurrence]
        return AstGraph(
            keys=list(self._keys),
            nn_edges=dict(self._nn),
            pc_edges=set(self._pc),
            positions=positions,
            rightmost=self._node_of_position[-1],
            target=target,
        )


def build_graph(prefix: Sequence[FlatNode], target: tuple[int, int] | None = None) -> AstGraph:
    """Build the merged graph of a prefix (1 to 49 elements)."""
    if not prefix:
        raise ValueError("cannot build a graph from an empty prefix")
    builder = GraphBuilder()
    for node in prefix:
        builder.append(node)
    return builder.graph(target=target)


def build_tree_graph(prefix: Sequence[FlatNode], target: tuple[int, int] | None = None) -> AstGraph:
    """Graph over the unflattened partial AST: one node per element, no merging.

    Used by the original-AST ablation. Edges are the tree's parent-child
    links (undirected with weight 1 for attention, directed for the parent
    layer); position distances are zeroed since nothing is merged.
    """
    if not prefix:
        raise ValueError("cannot build a graph from an empty prefix")
    keys = [(n.type_id, n.value_id) for n in prefix]
    nn: dict[tuple[int, int], int] = {}
    pc: set[tuple[int, int]] = set()
    for i, node in enumerate(prefix):
        if node.parent_pos is not None:
            p = node.parent_pos
            if not 0 <= p < i:
                raise ValueError(f"parent position {p} not before element {i}")
            nn[(p, i)] = 1
            pc.add((p, i))
    return AstGraph(
        keys=keys,
        nn_edges=nn,
        pc_edges=pc,
        positions=[0] * len(keys),
        rightmost=len(keys) - 1,
        target=target,
    )


def graph_to_dict(graph: AstGraph, vocab: Vocabulary | None = None) -> dict:
    """JSON-ready serialization for golden tests and the playground inspector."""
    nodes = []
    for i, (type_id, value_id) in enumerate(graph.keys):
        node = {
            "type_id": type_id,
            "value_id": value_id,
            "position_distance": graph.positions[i],
        }
        if vocab is not None:
            node["type"] = vocab.decode_type(type_id)
            node["value"] = vocab.decode_value(value_id)
        nodes.append(node)
    return {
        "nodes": nodes,
        "nn_edges": [
            {"a": a, "b": b, "weight": w}
            for (a, b), w in sorted(graph.nn_edges.items())
        ],
        "pc_edges": sorted([list(e) for e in graph.pc_edges]),
        "rightmost": graph.rightmost,
    }
