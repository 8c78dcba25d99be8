"""Synthetic segment corpus for desk-scale experiments.

Sequences are repetition-heavy, like real code: a value that has appeared
before is followed by its current follower value, until that pairing has
been used a fixed number of times, at which point the follower switches
deterministically (keyed by the previous follower's class). Values
appearing for the first time take a successor keyed by the class of the
value before them. A small noise rate injects uniform draws. Each value
has a fixed type. Parents usually point at the immediate predecessor,
occasionally further back.

The pairing-count rule is the point: how often a (value, follower) pair
has occurred is stored in the merged graph's adjacency counts and in node
multiplicity, and nowhere else, so a model that cannot aggregate along
node-node edges has to fall back on priors.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .pipeline import EMPTY, UNK, FlatNode, Segment, Vocabulary, write_segments, write_vocab

# times a (value, follower) pairing repeats before the follower switches
FOLLOWER_CAP = 3


def toy_vocabulary(num_values: int = 200, num_types: int = 20) -> Vocabulary:
    values = [EMPTY, UNK] + [f"v{i:03d}" for i in range(num_values - 2)]
    types = [f"t{i:02d}" for i in range(num_types)]
    return Vocabulary(values=values, types=types, k=num_values - 2)


def generate_segments(
    num_segments: int = 200,
    segment_length: int = 50,
    num_values: int = 200,
    num_types: int = 20,
    seed: int = 0,
    noise: float = 0.015,
    chain_parent_prob: float = 0.85,
    context_classes: int = 8,
    restart_prob: float = 0.12,
    fresh_skew: float = 1.0,
) -> list[Segment]:
    rng = np.random.default_rng(seed)
    # fresh successors are rank-biased so values recur within a window,
    # like identifiers in real code; fresh_skew 0 would make them uniform
    ranked = rng.permutation(np.arange(2, num_values))
    weights = 1.0 / np.arange(1, num_values - 1) ** fresh_skew
    weights /= weights.sum()
    successor = ranked[
        rng.choice(num_values - 2, size=(num_values, context_classes), p=weights)
    ]
    value_class = rng.integers(0, context_classes, size=num_values)
    type_of = rng.integers(0, num_types, size=num_values)

    segments: list[Segment] = []
    for si in range(num_segments):
        first = int(rng.integers(2, num_values))
        # the second value follows the fresh rule with the first as its own
        # context, so even single-node prefixes have a predictable target
        values = [first, int(successor[first, value_class[first]])]
        followers: dict[int, tuple[int, int]] = {first: (values[1], 1)}
        while len(values) < segment_length:
            prev = values[-1]
            roll = rng.random()
            if roll < noise:
                nxt = int(rng.integers(2, num_values))
                uses = 1
            elif roll < noise + restart_prob:
                # jump back to the segment's opening value; this reorders
                # recency without erasing the adjacency history
                nxt = first
                uses = 1
            elif prev in followers:
                current, used = followers[prev]
                if used < FOLLOWER_CAP:
                    nxt, uses = current, used + 1
                else:
                    # pairing exhausted: switch to the successor keyed by
                    # the worn-out follower's class
                    nxt = int(successor[prev, value_class[current]])
                    uses = 1 if nxt != current else used + 1
            else:
                nxt = int(successor[prev, value_class[values[-2]]])
                uses = 1
            followers[prev] = (nxt, uses)
            values.append(nxt)
        nodes = []
        for pos, v in enumerate(values):
            if pos == 0:
                parent = None
            elif rng.random() < chain_parent_prob:
                parent = pos - 1
            else:
                parent = int(rng.integers(0, pos))
            nodes.append(FlatNode(int(type_of[v]), v, parent))
        segments.append(Segment(nodes, source_file=f"toy-{si}", segment_index=0))
    return segments


def make_toy_dataset(
    out_dir: str | Path,
    num_segments: int = 200,
    segment_length: int = 50,
    num_values: int = 200,
    num_types: int = 20,
    seed: int = 0,
    noise: float = 0.015,
    chain_parent_prob: float = 0.85,
    context_classes: int = 8,
    restart_prob: float = 0.12,
    fresh_skew: float = 1.0,
) -> tuple[Path, Path]:
    """Write vocab.json and segments.jsonl; returns both paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab = toy_vocabulary(num_values, num_types)
    segments = generate_segments(
        num_segments=num_segments,
        segment_length=segment_length,
        num_values=num_values,
        num_types=num_types,
        seed=seed,
        noise=noise,
        chain_parent_prob=chain_parent_prob,
        context_classes=context_classes,
        restart_prob=restart_prob,
        fresh_skew=fresh_skew,
    )
    vocab_path = out / "vocab.json"
    segments_path = out / "segments.jsonl"
    write_vocab(vocab_path, vocab)
    write_segments(segments_path, segments, vocab, stats={"num_files": num_segments})
    return segments_path, vocab_path
