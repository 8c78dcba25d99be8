"""The completion network: node embedding with positional offsets, stacked
attention blocks (first-order neighbor attention, global self-attention,
parent attention, feedforward with residual), a rightmost-conditioned
readout, twin value/type prediction heads, and the uncertainty-weighted
joint loss.

All forward code is batched: graphs are padded to the largest node count in
the batch and attention over padded entries is masked with large negative
logits before softmax.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .graph import AstGraph, build_graph, build_tree_graph
from .pipeline import FlatNode

NEG_INF = -1e30
LEAKY_SLOPE = 0.2

GRAPH_MODE_FLATTENED = "flattened"
GRAPH_MODE_ORIGINAL_AST = "original-ast"


@dataclass(frozen=True)
class ModelConfig:
    value_vocab_size: int
    type_vocab_size: int
    hidden: int = 128
    blocks: int = 2
    heads: int = 4
    use_neighbor_attention: bool = True
    use_global_attention: bool = True
    use_parent_attention: bool = True
    use_residual: bool = True
    use_positions: bool = True
    use_uncertainty_weighting: bool = True
    graph_mode: str = GRAPH_MODE_FLATTENED

    def __post_init__(self):
        if self.value_vocab_size < 2 or self.type_vocab_size < 1:
            raise ValueError("vocabulary sizes too small")
        if self.hidden < 2 or self.hidden % 2 != 0:
            raise ValueError("hidden size must be a positive even number")
        if self.heads < 1:
            raise ValueError("need at least one attention head")
        if self.blocks < 1:
            raise ValueError("need at least one block")
        if not self.use_neighbor_attention and not self.use_global_attention:
            raise ValueError(
                "disabling both neighbor and global attention leaves no mixing layer"
            )
        if self.graph_mode not in (GRAPH_MODE_FLATTENED, GRAPH_MODE_ORIGINAL_AST):
            raise ValueError(f"unknown graph_mode {self.graph_mode!r}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        return cls(**doc)

    def config_hash(self) -> str:
        raw = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(raw.encode("utf-8")).hexdigest()

    def with_overrides(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


# ---------------------------------------------------------------------------
# parameters


def init_params(config: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> dict[str, Parameter]:
    """Fresh parameter set. Inner block matrices draw He-style
    uniform(+-sqrt(6/fan_in)): they feed stacked ReLU layers, and anything
    smaller attenuates signal so fast that the no-residual ablations cannot
    train at all. Matrices that produce attention logits or see raw position
    offsets (0..49) stay at uniform(+-1/sqrt(fan_in)) so softmaxes start
    unsaturated. Biases start at zero, embedding tables at normal(0, 1), and
    both task log-scales at zero (equal task weights at the start).

    Embeddings need unit scale: position offsets enter the input layer as
    raw distances, and much smaller tables leave type/value identity
    invisible next to them for most of a short training run."""
    d = config.hidden
    params: dict[str, Parameter] = {}

    def matrix(name: str, out_dim: int, in_dim: int, relu_gain: bool = False):
        bound = math.sqrt(6.0 / in_dim) if relu_gain else 1.0 / math.sqrt(in_dim)
        params[name] = Parameter(name, rng.uniform(-bound, bound, size=(out_dim, in_dim)).astype(dtype))

    def vector(name: str, dim: int, fan_in: int):
        bound = 1.0 / math.sqrt(fan_in)
        params[name] = Parameter(name, rng.uniform(-bound, bound, size=(dim,)).astype(dtype))

    def bias(name: str, dim: int):
        params[name] = Parameter(name, np.zeros(dim, dtype=dtype))

    def table(name: str, rows: int, cols: int):
        params[name] = Parameter(name, (rng.normal(0.0, 1.0, size=(rows, cols))).astype(dtype))

    table("embed.value", config.value_vocab_size, d)
    table("embed.type", config.type_vocab_size, d)
    matrix("input.w", d, 2 * d)
    bias("input.b", d)

    for b in range(config.blocks):
        for m in range(config.heads):
            vector(f"block{b}.neighbor.h{m}.attn_vec", 2 * d + 1, 2 * d + 1)
            matrix(f"block{b}.neighbor.h{m}.score_w", d, d)
            matrix(f"block{b}.neighbor.h{m}.agg_w", d, d, relu_gain=True)
        matrix(f"block{b}.global.wk", d, d)
        matrix(f"block{b}.global.wq", d, d)
        matrix(f"block{b}.global.wv", d, d, relu_gain=True)
        matrix(f"block{b}.parent.w_self", d, d, relu_gain=True)
        matrix(f"block{b}.parent.w_parents", d, d, relu_gain=True)
        bias(f"block{b}.parent.b1", d)
        matrix(f"block{b}.parent.w_out", d, d, relu_gain=True)
        bias(f"block{b}.parent.b_out", d)
        matrix(f"block{b}.ffn.w1", d, d, relu_gain=True)
        bias(f"block{b}.ffn.b1", d)
        matrix(f"block{b}.ffn.w2", d, d, relu_gain=True)
        bias(f"block{b}.ffn.b2", d)

    matrix("readout.w_node", d, d)
    matrix("readout.w_rightmost", d, d)
    bias("readout.b", d)
    vector("readout.score_vec", d, d)

    matrix("head.value.w", config.value_vocab_size, d)
    bias("head.value.b", config.value_vocab_size)
    matrix("head.type.w", config.type_vocab_size, d)
    bias("head.type.b", config.type_vocab_size)

    params["loss.log_sigma_value"] = Parameter("loss.log_sigma_value", np.zeros((), dtype=dtype))
    params["loss.log_sigma_type"] = Parameter("loss.log_sigma_type", np.zeros((), dtype=dtype))
    return params


# ---------------------------------------------------------------------------
# batching


@dataclass(slots=True)
class GraphBatch:
    """Dense padded arrays for a list of graphs.

    adj_weights already includes the +1 attention self-loop on every
    diagonal entry (padded lanes get a bare self-loop so their softmax stays
    defined; masking keeps them out of every real node's mixture).
    """

    type_ids: np.ndarray      # (B, N) int
    value_ids: np.ndarray     # (B, N) int
    node_mask: np.ndarray     # (B, N) 1.0 real / 0.0 pad
    adj_weights: np.ndarray   # (B, N, N)
    adj_mask: np.ndarray      # (B, N, N) additive: 0 neighbor / NEG_INF not
    parent_mat: np.ndarray    # (B, N, N) row-normalized parent averaging
    positions: np.ndarray     # (B, N)
    rightmost: np.ndarray     # (B,) int
    target_values: np.ndarray | None
    target_types: np.ndarray | None
    num_nodes: np.ndarray     # (B,) int

    @property
    def size(self) -> int:
        return self.type_ids.shape[0]


def collate(graphs: Sequence[AstGraph], dtype=np.float32) -> GraphBatch:
    b = len(graphs)
    n = max(g.num_nodes for g in graphs)
    type_ids = np.zeros((b, n), dtype=np.int64)
    value_ids = np.zeros((b, n), dtype=np.int64)
    node_mask = np.zeros((b, n), dtype=dtype)
    adj = np.zeros((b, n, n), dtype=dtype)
    parents = np.zeros((b, n, n), dtype=dtype)
    positions = np.zeros((b, n), dtype=dtype)
    rightmost = np.zeros(b, dtype=np.int64)
    num_nodes = np.zeros(b, dtype=np.int64)
    has_targets = all(g.target is not None for g in graphs)
    tv = np.zeros(b, dtype=np.int64) if has_targets else None
    tt = np.zeros(b, dtype=np.int64) if has_targets else None

    for gi, g in enumerate(graphs):
        k = g.num_nodes
        num_nodes[gi] = k
        for i, (t, v) in enumerate(g.keys):
            type_ids[gi, i] = t
            value_ids[gi, i] = v
        node_mask[gi, :k] = 1.0
        positions[gi, :k] = g.positions
        for (i, j), w in g.nn_edges.items():
            adj[gi, i, j] += w
            if i != j:
                adj[gi, j, i] += w
        child_parents: dict[int, list[int]] = {}
        for parent, child in g.pc_edges:
            child_parents.setdefault(child, []).append(parent)
        for child, plist in child_parents.items():
            parents[gi, child, plist] = 1.0 / len(plist)
        rightmost[gi] = g.rightmost
        if has_targets:
            tv[gi], tt[gi] = g.target

    idx = np.arange(n)
    adj[:, idx, idx] += 1.0  # attention self-loop, padded lanes included
    adj_mask = np.where(adj > 0, 0.0, NEG_INF).astype(dtype)
    return GraphBatch(
        type_ids=type_ids,
        value_ids=value_ids,
        node_mask=node_mask,
        adj_weights=adj,
        adj_mask=adj_mask,
        parent_mat=parents,
        positions=positions,
        rightmost=rightmost,
        target_values=tv,
        target_types=tt,
        num_nodes=num_nodes,
    )


def graph_for_prefix(
    prefix: Sequence[FlatNode],
    target: tuple[int, int] | None,
    graph_mode: str,
) -> AstGraph:
    if graph_mode == GRAPH_MODE_ORIGINAL_AST:
        return build_tree_graph(prefix, target=target)
    return build_graph(prefix, target=target)


# ---------------------------------------------------------------------------
# layers


def embed_nodes(
    type_table: Tensor,
    value_table: Tensor,
    w_in: Tensor,
    b_in: Tensor,
    batch: GraphBatch,
    use_positions: bool,
) -> Tensor:
    """ReLU(W * ([type || value] + position) + b) per node."""
    t = ad.gather(type_table, batch.type_ids)
    v = ad.gather(value_table, batch.value_ids)
    x = ad.concat([t, v], axis=-1)
    if use_positions:
        # Constant vector with every coordinate equal to the node's distance.
        x = ad.add(x, batch.positions[:, :, None])
    return ad.relu(ad.linear(x, w_in, b_in))


def neighbor_attention(
    h: Tensor,
    adj_weights: np.ndarray,
    adj_mask: np.ndarray,
    head_params: Sequence[tuple[Tensor, Tensor, Tensor]],
    collect: bool = False,
) -> tuple[Tensor, list[np.ndarray]]:
    """Multi-head attention over first-order neighbors along node-node edges.

    Head logits score (score_w @ h_i, score_w @ h_j, edge weight) through a
    shared attention vector and LeakyReLU; softmax normalizes over each
    node's neighborhood (self-loop included), and heads are averaged.
    """
    d = h.shape[-1]
    per_head = []
    attentions: list[np.ndarray] = []
    for attn_vec, score_w, agg_w in head_params:
        wh = ad.linear(h, score_w)
        a_src = ad.reshape(ad.narrow(attn_vec, 0, 0, d), (d, 1))
        a_dst = ad.reshape(ad.narrow(attn_vec, 0, d, d), (d, 1))
        a_edge = ad.narrow(attn_vec, 0, 2 * d, 1)
        s_own = ad.matmul(wh, a_src)                     # (B, N, 1)
        s_other = ad.swap_last(ad.matmul(wh, a_dst))     # (B, 1, N)
        logits = ad.leaky_relu(
            ad.add(ad.add(s_own, s_other), ad.mul(ad.as_tensor(adj_weights), a_edge)),
            LEAKY_SLOPE,
        )
        alpha = ad.softmax(ad.add(logits, adj_mask), axis=-1)
        per_head.append(ad.matmul(alpha, ad.linear(h, agg_w)))
        if collect:
            attentions.append(alpha.data)
    total = per_head[0]
    for extra in per_head[1:]:
        total = ad.add(total, extra)
    return ad.relu(ad.mul(total, 1.0 / len(per_head))), attentions


def global_attention(
    h: Tensor,
    node_mask: np.ndarray,
    wk: Tensor,
    wq: Tensor,
    wv: Tensor,
    collect: bool = False,
) -> tuple[Tensor, np.ndarray | None]:
    """Scaled dot-product self-attention over all graph nodes.

    Each output node mixes value-projected features with weights normalized
    over source nodes; padded sources are masked out of every mixture.
    """
    d = h.shape[-1]
    q = ad.linear(h, wq)
    k = ad.linear(h, wk)
    v = ad.linear(h, wv)
    scores = ad.mul(ad.matmul(q, ad.swap_last(k)), 1.0 / math.sqrt(d))
    key_mask = np.where(node_mask > 0, 0.0, NEG_INF).astype(node_mask.dtype)[:, None, :]
    attn = ad.softmax(ad.add(scores, key_mask), axis=-1)
    out = ad.matmul(attn, v)
    return out, (attn.data if collect else None)


def parent_attention(
    h: Tensor,
    parent_mat: np.ndarray,
    w_self: Tensor,
    w_parents: Tensor,
    b1: Tensor,
    w_out: Tensor,
    b_out: Tensor,
) -> Tensor:
    """Refine each node with the mean of its parents' features; nodes without
    parents use a zero parent term."""
    parent_mean = ad.matmul(ad.as_tensor(parent_mat, like=h), h)
    inner = ad.relu(
        ad.add(ad.add(ad.linear(h, w_self), ad.linear(parent_mean, w_parents)), b1)
    )
    return ad.relu(ad.linear(inner, w_out, b_out))


def block_output(
    x: Tensor,
    block_input: Tensor,
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
    use_residual: bool,
) -> Tensor:
    """Two-layer feedforward closing a block, plus the skip connection."""
    r = ad.relu(ad.linear(x, w1, b1))
    y = ad.linear(r, w2, b2)
    return ad.add(y, block_input) if use_residual else y


def readout(
    h: Tensor,
    rightmost: np.ndarray,
    node_mask: np.ndarray,
    w_node: Tensor,
    w_rightmost: Tensor,
    b: Tensor,
    score_vec: Tensor,
) -> Tensor:
    """Unnormalized soft attention against the right-most node's features:
    s = sum_i beta_i h_i with beta_i = z . sigmoid(W1 h_i + W2 h_rm + b)."""
    bsz, _, d = h.shape
    h_rm = ad.take_rows(h, rightmost)
    gate = ad.sigmoid(
        ad.add(
            ad.add(ad.linear(h, w_node), ad.reshape(ad.linear(h_rm, w_rightmost), (bsz, 1, d))),
            b,
        )
    )
    beta = ad.matmul(gate, ad.reshape(score_vec, (d, 1)))      # (B, N, 1)
    beta = ad.mul(beta, node_mask[:, :, None])
    summary = ad.matmul(ad.swap_last(beta), h)                 # (B, 1, d)
    return ad.reshape(summary, (bsz, d))


def cross_entropy_sum(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Summed negative log-likelihood over the batch."""
    picked = ad.pick(ad.log_softmax(logits, axis=-1), targets)
    return ad.mul(picked.sum(), -1.0)


def joint_loss(
    loss_value: Tensor,
    loss_type: Tensor,
    log_sigma_value: Tensor,
    log_sigma_type: Tensor,
    use_uncertainty_weighting: bool,
) -> Tensor:
    """exp(-2a) L_v + exp(-2b) L_t + a + b, or the plain sum with both task
    weights fixed to 1 when uncertainty weighting is off."""
    if not use_uncertainty_weighting:
        return ad.add(loss_value, loss_type)
    weighted_v = ad.mul(ad.exp(ad.mul(log_sigma_value, -2.0)), loss_value)
    weighted_t = ad.mul(ad.exp(ad.mul(log_sigma_type, -2.0)), loss_type)
    return ad.add(ad.add(weighted_v, weighted_t), ad.add(log_sigma_value, log_sigma_type))


# ---------------------------------------------------------------------------
# the assembled network


@dataclass(slots=True)
class ForwardResult:
    node_states: Tensor
    summary: Tensor
    value_logits: Tensor
    type_logits: Tensor
    neighbor_attentions: list[list[np.ndarray]] = field(default_factory=list)
    global_attentions: list[np.ndarray] = field(default_factory=list)


class Model:
    """Parameter owner plus the composed forward pass."""

    def __init__(
        self,
        config: ModelConfig,
        params: dict[str, Parameter] | None = None,
        seed: int = 0,
        dtype=np.float32,
    ):
        self.config = config
        self.dtype = np.dtype(dtype)
        if params is None:
            params = init_params(config, np.random.default_rng(seed), dtype=self.dtype)
        self.params = params

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def astype(self, dtype) -> "Model":
        dtype = np.dtype(dtype)
        for p in self.params.values():
            p.data = p.data.astype(dtype)
            p.adam_m = p.adam_m.astype(dtype)
            p.adam_v = p.adam_v.astype(dtype)
        self.dtype = dtype
        return self

    def forward(self, batch: GraphBatch, collect_attention: bool = False) -> ForwardResult:
        cfg = self.config
        p = self.params
        h = embed_nodes(
            p["embed.type"], p["embed.value"], p["input.w"], p["input.b"],
            batch, cfg.use_positions,
        )
        neighbor_attns: list[list[np.ndarray]] = []
        global_attns: list[np.ndarray] = []
        for bi in range(cfg.blocks):
            block_in = h
            x = h
            if cfg.use_neighbor_attention:
                heads = [
                    (
                        p[f"block{bi}.neighbor.h{m}.attn_vec"],
                        p[f"block{bi}.neighbor.h{m}.score_w"],
                        p[f"block{bi}.neighbor.h{m}.agg_w"],
                    )
                    for m in range(cfg.heads)
                ]
                x, attns = neighbor_attention(
                    x, batch.adj_weights, batch.adj_mask, heads, collect=collect_attention
                )
                if collect_attention:
                    neighbor_attns.append(attns)
            if cfg.use_global_attention:
                x, gattn = global_attention(
                    x, batch.node_mask,
                    p[f"block{bi}.global.wk"], p[f"block{bi}.global.wq"], p[f"block{bi}.global.wv"],
                    collect=collect_attention,
                )
                if collect_attention and gattn is not None:
                    global_attns.append(gattn)
            if cfg.use_parent_attention:
                x = parent_attention(
                    x, batch.parent_mat,
                    p[f"block{bi}.parent.w_self"], p[f"block{bi}.parent.w_parents"],
                    p[f"block{bi}.parent.b1"], p[f"block{bi}.parent.w_out"],
                    p[f"block{bi}.parent.b_out"],
                )
            h = block_output(
                x, block_in,
                p[f"block{bi}.ffn.w1"], p[f"block{bi}.ffn.b1"],
                p[f"block{bi}.ffn.w2"], p[f"block{bi}.ffn.b2"],
                cfg.use_residual,
            )
        summary = readout(
            h, batch.rightmost, batch.node_mask,
            p["readout.w_node"], p["readout.w_rightmost"], p["readout.b"],
            p["readout.score_vec"],
        )
        value_logits = ad.linear(summary, p["head.value.w"], p["head.value.b"])
        type_logits = ad.linear(summary, p["head.type.w"], p["head.type.b"])
        return ForwardResult(
            node_states=h,
            summary=summary,
            value_logits=value_logits,
            type_logits=type_logits,
            neighbor_attentions=neighbor_attns,
            global_attentions=global_attns,
        )

    def losses(self, batch: GraphBatch, result: ForwardResult | None = None) -> tuple[Tensor, Tensor]:
        if batch.target_values is None or batch.target_types is None:
            raise ValueError("batch carries no targets")
        if result is None:
            result = self.forward(batch)
        loss_v = cross_entropy_sum(result.value_logits, batch.target_values)
        loss_t = cross_entropy_sum(result.type_logits, batch.target_types)
        return loss_v, loss_t

    def joint_loss(self, loss_value: Tensor, loss_type: Tensor) -> Tensor:
        return joint_loss(
            loss_value,
            loss_type,
            self.params["loss.log_sigma_value"],
            self.params["loss.log_sigma_type"],
            self.config.use_uncertainty_weighting,
        )

    def batch_loss(self, batch: GraphBatch) -> tuple[Tensor, Tensor, Tensor]:
        """(joint, value, type) loss tensors for one padded batch."""
        loss_v, loss_t = self.losses(batch)
        return self.joint_loss(loss_v, loss_t), loss_v, loss_t

    def predict_probs(self, batch: GraphBatch) -> tuple[np.ndarray, np.ndarray]:
        result = self.forward(batch)
        pv = ad.softmax(result.value_logits, axis=-1).data
        pt = ad.softmax(result.type_logits, axis=-1).data
        return pv, pt


def top_k(probs: np.ndarray, k: int) -> list[tuple[int, float]]:
    """Descending by probability, ties broken by smaller id."""
    order = np.lexsort((np.arange(probs.shape[0]), -probs))
    return [(int(i), float(probs[i])) for i in order[:k]]
