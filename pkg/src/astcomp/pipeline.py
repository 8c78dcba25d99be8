"""Corpus ingestion: parse AST JSON lines, flatten trees, build vocabularies,
cut 50-node segments, and resolve parent positions.

The input format is one JSON array per line; each element is a node record
with a "type" field, an optional "value", and an optional "children" list of
integer indices into the same array. Nodes are stored so that children always
come after their parent (pre-order storage).
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple

EMPTY = "EMPTY"
UNK = "UNK"
EMPTY_ID = 0
UNK_ID = 1

SEGMENT_LENGTH = 50

SEGMENTS_FORMAT = "astcomp-segments"
VOCAB_FORMAT = "astcomp-vocab"
FORMAT_VERSION = 1


class AstParseError(ValueError):
    """Malformed JSON or record shape in an input line."""


class AstStructureError(ValueError):
    """Child indices that do not describe a tree in pre-order storage."""


class VocabError(KeyError):
    """Lookup of a string the vocabulary does not contain."""


@dataclass(slots=True)
class AstNode:
    type_name: str
    value: str | None
    children: list[int]
    index: int


@dataclass(slots=True)
class Ast:
    nodes: list[AstNode]

    def __len__(self) -> int:
        return len(self.nodes)


def load_ast(json_line: str, line_number: int | None = None) -> Ast:
    """Parse one benchmark line into an Ast, validating tree structure."""
    where = f"line {line_number}" if line_number is not None else "input"
    try:
        records = json.loads(json_line)
    except json.JSONDecodeError as exc:
        raise AstParseError(f"{where}: malformed JSON: {exc}") from exc
    if not isinstance(records, list):
        raise AstParseError(f"{where}: expected a JSON array of node records")
    if not records:
        raise AstParseError(f"{where}: empty AST (a program has at least one node)")

    n = len(records)
    nodes: list[AstNode] = []
    parent_seen = [False] * n
    for i, rec in enumerate(records):
        if not isinstance(rec, dict) or "type" not in rec:
            raise AstParseError(f"{where}: node {i} lacks a 'type' field")
        children = rec.get("children") or []
        for c in children:
            if not isinstance(c, int) or c >= n:
                raise AstStructureError(f"{where}: node {i} child index {c} out of range")
            if c <= i:
                raise AstStructureError(
                    f"{where}: node {i} child index {c} is not after its parent (cycle)"
                )
            if parent_seen[c]:
                raise AstStructureError(f"{where}: node {c} has more than one parent")
            parent_seen[c] = True
        value = rec.get("value")
        nodes.append(AstNode(rec["type"], None if value is None else str(value), list(children), i))

    for i in range(1, n):
        if not parent_seen[i]:
            raise AstStructureError(f"{where}: node {i} is unreachable from the root")
    return Ast(nodes)


def flatten(ast: Ast) -> list[tuple[str, str]]:
    """Pre-order depth-first (type, value) sequence; non-leaf values become EMPTY."""
    return [(t, v) for t, v, _ in flatten_with_parents(ast)]


def flatten_with_parents(ast: Ast) -> list[tuple[str, str, int | None]]:
    """Flatten to (type, value, parent position in the flattened sequence)."""
    out: list[tuple[str, str, int | None]] = []
    # Iterative pre-order: stack of (node index, parent's flattened position).
    stack: list[tuple[int, int | None]] = [(0, None)]
    while stack:
        idx, parent_pos = stack.pop()
        node = ast.nodes[idx]
        pos = len(out)
        if node.children:
            value = EMPTY
        else:
            value = node.value if node.value is not None else EMPTY
        out.append((node.type_name, value, parent_pos))
        for child in reversed(node.children):
            stack.append((child, pos))
    return out


@dataclass(slots=True)
class Vocabulary:
    """Bidirectional value<->id and type<->id maps.

    Value ids 0 and 1 are reserved for EMPTY and UNK; the rest are the K most
    frequent training values. The type vocabulary is closed-world: every
    training type gets an id and unknown types are an error.
    """

    values: list[str]
    types: list[str]
    k: int
    value_ids: dict[str, int] = field(init=False, repr=False)
    type_ids: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.value_ids = {v: i for i, v in enumerate(self.values)}
        self.type_ids = {t: i for i, t in enumerate(self.types)}

    @property
    def value_size(self) -> int:
        return len(self.values)

    @property
    def type_size(self) -> int:
        return len(self.types)

    def encode_value(self, value: str) -> int:
        return self.value_ids.get(value, UNK_ID)

    def decode_value(self, value_id: int) -> str:
        return self.values[value_id]

    def encode_type(self, type_name: str) -> int:
        try:
            return self.type_ids[type_name]
        except KeyError:
            raise VocabError(f"unknown type {type_name!r} (types are closed-world)") from None

    def decode_type(self, type_id: int) -> str:
        return self.types[type_id]

    def value_hash(self) -> str:
        return _list_sha256(self.values)

    def type_hash(self) -> str:
        return _list_sha256(self.types)


def _list_sha256(items: list[str]) -> str:
    raw = json.dumps(items, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    return hashlib.sha256(raw).hexdigest()


def build_vocab(files: Iterable[list[tuple[str, str]]], k: int) -> Vocabulary:
    """Top-k value vocabulary (plus EMPTY/UNK) and exhaustive type vocabulary.

    Ties in value frequency break by first appearance in corpus order, so two
    passes over the same corpus produce identical id assignments.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    counts: Counter[str] = Counter()
    first_seen: dict[str, int] = {}
    types: list[str] = []
    type_seen: set[str] = set()
    position = 0
    saw_any = False
    for pairs in files:
        saw_any = True
        for type_name, value in pairs:
            if type_name not in type_seen:
                type_seen.add(type_name)
                types.append(type_name)
            if value not in (EMPTY, UNK):
                counts[value] += 1
                if value not in first_seen:
                    first_seen[value] = position
            position += 1
    if not saw_any:
        raise ValueError("empty corpus: vocabulary needs at least one file")

    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], first_seen[kv[0]]))
    values = [EMPTY, UNK] + [v for v, _ in ranked[:k]]
    return Vocabulary(values=values, types=types, k=k)


class FlatNode(NamedTuple):
    type_id: int
    value_id: int
    parent_pos: int | None


@dataclass(slots=True)
class Segment:
    nodes: list[FlatNode]
    source_file: str
    segment_index: int

    def __len__(self) -> int:
        return len(self.nodes)


def encode_file(
    flat: list[tuple[str, str, int | None]], vocab: Vocabulary
) -> list[tuple[int, int, int | None]]:
    """Map a flattened (type, value, parent) file into vocabulary id space."""
    return [
        (vocab.encode_type(t), vocab.encode_value(v), parent)
        for t, v, parent in flat
    ]


def segment_and_resolve(
    encoded: list[tuple[int, int, int | None]],
    source_file: str = "",
    segment_length: int = SEGMENT_LENGTH,
) -> list[Segment]:
    """Cut consecutive windows and localize parent positions.

    Within a segment, a parent outside the window is replaced by the
    immediate predecessor position; the first node of every segment has no
    parent position at all.
    """
    segments: list[Segment] = []
    for seg_index, start in enumerate(range(0, len(encoded), segment_length)):
        window = encoded[start : start + segment_length]
        nodes: list[FlatNode] = []
        for local, (type_id, value_id, parent) in enumerate(window):
            if local == 0:
                parent_pos = None
            elif parent is not None and parent >= start:
                parent_pos = parent - start
            else:
                parent_pos = local - 1
            nodes.append(FlatNode(type_id, value_id, parent_pos))
        segments.append(Segment(nodes, source_file, seg_index))
    return segments


# ---------------------------------------------------------------------------
# dataset files


def write_vocab(path: str | Path, vocab: Vocabulary) -> None:
    doc = {
        "format": VOCAB_FORMAT,
        "version": FORMAT_VERSION,
        "k": vocab.k,
        "values": vocab.values,
        "types": vocab.types,
    }
    Path(path).write_text(json.dumps(doc, ensure_ascii=False), encoding="utf-8")


def load_vocab(path: str | Path) -> Vocabulary:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != VOCAB_FORMAT:
        raise ValueError(f"{path}: not a vocabulary file")
    return Vocabulary(values=doc["values"], types=doc["types"], k=doc["k"])


def write_segments(path: str | Path, segments: Iterable[Segment], vocab: Vocabulary, stats: dict | None = None) -> dict:
    """Line-delimited encoded-segment file with a versioned header line."""
    segments = list(segments)
    header = {
        "format": SEGMENTS_FORMAT,
        "version": FORMAT_VERSION,
        "k": vocab.k,
        "value_vocab_hash": vocab.value_hash(),
        "type_vocab_hash": vocab.type_hash(),
        "value_vocab_size": vocab.value_size,
        "type_vocab_size": vocab.type_size,
        "num_segments": len(segments),
    }
    if stats:
        header.update(stats)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, ensure_ascii=False) + "\n")
        for seg in segments:
            rec = {
                "file": seg.source_file,
                "seg": seg.segment_index,
                "types": [n.type_id for n in seg.nodes],
                "values": [n.value_id for n in seg.nodes],
                "parents": [n.parent_pos for n in seg.nodes],
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    return header


def read_segments(path: str | Path) -> tuple[dict, list[Segment]]:
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: missing segment-file header") from exc
        if header.get("format") != SEGMENTS_FORMAT:
            raise ValueError(f"{path}: not an encoded-segment file")
        segments = []
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            nodes = [
                FlatNode(t, v, p)
                for t, v, p in zip(rec["types"], rec["values"], rec["parents"])
            ]
            segments.append(Segment(nodes, rec.get("file", ""), rec.get("seg", 0)))
    return header, segments


def iter_corpus_lines(path: str | Path) -> Iterator[tuple[int, str]]:
    """Yield (1-based line number, line) skipping blank lines."""
    with open(path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            if line.strip():
                yield i, line


def preprocess_corpus(input_path: str | Path, out_dir: str | Path, k: int) -> dict:
    """Two-pass preprocessing: count values, freeze the vocabulary, then
    encode and segment every file. Writes vocab.json and segments.jsonl."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def flattened_files() -> Iterator[list[tuple[str, str]]]:
        for lineno, line in iter_corpus_lines(input_path):
            yield flatten(load_ast(line, line_number=lineno))

    vocab = build_vocab(flattened_files(), k)

    segments: list[Segment] = []
    num_files = 0
    num_nodes = 0
    unk_nodes = 0
    for lineno, line in iter_corpus_lines(input_path):
        flat = flatten_with_parents(load_ast(line, line_number=lineno))
        encoded = encode_file(flat, vocab)
        num_files += 1
        num_nodes += len(encoded)
        unk_nodes += sum(1 for _, v, _ in encoded if v == UNK_ID)
        segments.extend(segment_and_resolve(encoded, source_file=f"line-{lineno}"))

    stats = {
        "num_files": num_files,
        "num_nodes": num_nodes,
        "unk_rate": (unk_nodes / num_nodes) if num_nodes else 0.0,
    }
    write_vocab(out / "vocab.json", vocab)
    header = write_segments(out / "segments.jsonl", segments, vocab, stats=stats)
    return header
