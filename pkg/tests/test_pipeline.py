"""Ingestion pipeline: parsing, flattening, vocabulary, segmentation."""

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from astcomp.pipeline import (
    EMPTY,
    EMPTY_ID,
    UNK,
    UNK_ID,
    Ast,
    AstParseError,
    AstStructureError,
    FlatNode,
    VocabError,
    build_vocab,
    flatten,
    flatten_with_parents,
    load_ast,
    preprocess_corpus,
    read_segments,
    segment_and_resolve,
    write_segments,
    write_vocab,
    load_vocab,
)


def line(nodes) -> str:
    return json.dumps(nodes)


class TestLoadAst:
    def test_two_node_tree(self):
        ast = load_ast(line([{"type": "Module", "children": [1]},
                             {"type": "NameLoad", "value": "a"}]))
        assert len(ast) == 2
        assert ast.nodes[0].children == [1]
        assert ast.nodes[1].value == "a"

    def test_empty_array_rejected(self):
        with pytest.raises(AstParseError, match="at least one node"):
            load_ast("[]")

    def test_self_parenting_rejected(self):
        with pytest.raises(AstStructureError, match="cycle"):
            load_ast(line([{"type": "Module", "children": [0]}]))

    def test_malformed_json_names_line(self):
        with pytest.raises(AstParseError, match="line 17"):
            load_ast("{oops", line_number=17)

    def test_child_out_of_range(self):
        with pytest.raises(AstStructureError, match="out of range"):
            load_ast(line([{"type": "Module", "children": [5]}]))

    def test_double_parent_rejected(self):
        with pytest.raises(AstStructureError, match="more than one parent"):
            load_ast(line([
                {"type": "A", "children": [1, 2]},
                {"type": "B", "children": [2]},
                {"type": "C"},
            ]))

    def test_unreachable_node_rejected(self):
        with pytest.raises(AstStructureError, match="unreachable"):
            load_ast(line([{"type": "A"}, {"type": "B"}]))


def reference_preorder(ast: Ast):
    """Recursive traversal oracle, independent of the iterative one."""
    out = []

    def visit(i):
        node = ast.nodes[i]
        value = EMPTY if node.children else (node.value if node.value is not None else EMPTY)
        out.append((node.type_name, value))
        for c in node.children:
            visit(c)

    visit(0)
    return out


class TestFlatten:
    def test_single_node_root(self):
        ast = load_ast(line([{"type": "Module"}]))
        assert flatten(ast) == [("Module", EMPTY)]

    def test_balanced_binary_tree_matches_reference(self):
        # 7 nodes labeled in pre-order; stored children follow that labeling
        nodes = [
            {"type": "n0", "children": [1, 4]},
            {"type": "n1", "children": [2, 3]},
            {"type": "n2"}, {"type": "n3"},
            {"type": "n4", "children": [5, 6]},
            {"type": "n5"}, {"type": "n6"},
        ]
        ast = load_ast(line(nodes))
        flat = flatten(ast)
        assert flat == reference_preorder(ast)
        assert [t for t, _ in flat] == [f"n{i}" for i in range(7)]

    def test_storage_order_is_not_assumed(self):
        # children arrays may skip ahead; traversal order still wins
        nodes = [
            {"type": "root", "children": [1, 3]},
            {"type": "left", "children": [4]},
            {"type": "right-child"},
            {"type": "right", "children": [2]},
            {"type": "left-child"},
        ]
        # invalid under pre-order storage (3 -> 2 goes backwards)
        with pytest.raises(AstStructureError):
            load_ast(line(nodes))

    def test_non_leaf_value_becomes_empty(self):
        ast = load_ast(line([{"type": "A", "children": [1]}, {"type": "B"}]))
        assert flatten(ast)[0] == ("A", EMPTY)

    def test_partial_ast_fixture_order(self):
        from importlib import resources

        raw = (resources.files("astcomp") / "fixtures" / "compare_function.jsonl").read_text()
        flat = flatten(load_ast(raw))
        assert flat[8] == ("NameLoad", "b")      # right-most node of the partial AST
        assert flat[9] == ("Return", EMPTY)      # the next node to predict

    def test_parents_precede_children(self):
        ast = load_ast(line([
            {"type": "A", "children": [1, 2]},
            {"type": "B"},
            {"type": "C", "children": [3]},
            {"type": "D"},
        ]))
        for pos, (_, _, parent) in enumerate(flatten_with_parents(ast)):
            if parent is not None:
                assert parent < pos


@st.composite
def random_ast_records(draw):
    """Random pre-order-stored trees in the benchmark record format."""
    n = draw(st.integers(1, 40))
    records = [{"type": f"T{draw(st.integers(0, 5))}"} for _ in range(n)]
    for child in range(1, n):
        parent = draw(st.integers(0, child - 1))
        records[parent].setdefault("children", []).append(child)
    for i, rec in enumerate(records):
        if "children" not in rec and draw(st.booleans()):
            rec["value"] = f"val{draw(st.integers(0, 8))}"
    return records


@settings(max_examples=60, deadline=None)
@given(random_ast_records())
def test_flatten_matches_recursive_reference(records):
    ast = load_ast(json.dumps(records))
    flat = flatten(ast)
    assert len(flat) == len(records)
    assert flat == reference_preorder(ast)
    for pos, (_, _, parent) in enumerate(flatten_with_parents(ast)):
        assert parent is None or parent < pos


class TestBuildVocab:
    def test_top_k_with_reserved_ids(self):
        corpus = [[("T", "a")] * 5 + [("T", "b")] * 3 + [("T", "c")]]
        vocab = build_vocab(corpus, k=2)
        assert vocab.values == [EMPTY, UNK, "a", "b"]
        assert vocab.encode_value("c") == UNK_ID
        assert vocab.encode_value(EMPTY) == EMPTY_ID

    def test_k_zero_keeps_only_reserved(self):
        vocab = build_vocab([[("T", "a"), ("T", "b")]], k=0)
        assert vocab.values == [EMPTY, UNK]

    def test_ties_break_by_first_appearance(self):
        vocab = build_vocab([[("T", "z"), ("T", "y"), ("T", "z"), ("T", "y")]], k=1)
        assert vocab.values == [EMPTY, UNK, "z"]

    def test_empty_values_do_not_consume_budget(self):
        corpus = [[("T", EMPTY)] * 100 + [("T", "a")]]
        vocab = build_vocab(corpus, k=1)
        assert vocab.values == [EMPTY, UNK, "a"]

    def test_types_are_exhaustive_and_closed(self):
        vocab = build_vocab([[("A", "x"), ("B", EMPTY)]], k=5)
        assert vocab.types == ["A", "B"]
        with pytest.raises(VocabError):
            vocab.encode_type("C")

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError, match="empty corpus"):
            build_vocab([], k=5)

    def test_roundtrip_encode_decode(self):
        vocab = build_vocab([[("T", "a"), ("U", "b")]], k=5)
        for vid in range(vocab.value_size):
            assert vocab.encode_value(vocab.decode_value(vid)) == vid
        for tid in range(vocab.type_size):
            assert vocab.encode_type(vocab.decode_type(tid)) == tid


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.lists(st.sampled_from("abcdefg"), min_size=1, max_size=30), min_size=1, max_size=6),
    st.integers(0, 8),
)
def test_vocab_determinism_and_unk_monotonicity(files, k):
    corpus = [[("T", v) for v in f] for f in files]
    a = build_vocab(corpus, k)
    b = build_vocab(corpus, k)
    assert a.values == b.values and a.types == b.types
    if k > 0:
        smaller = build_vocab(corpus, k - 1)
        # shrinking the budget never admits a previously-unknown value
        assert set(smaller.values) <= set(a.values)


class TestSegmentation:
    def encode(self, n, parents=None):
        parents = parents or {}
        return [(0, i + 2, parents.get(i, (i - 1 if i else None))) for i in range(n)]

    def test_window_lengths(self):
        segs = segment_and_resolve(self.encode(120), "f")
        assert [len(s) for s in segs] == [50, 50, 20]

    def test_out_of_segment_parent_becomes_predecessor(self):
        segs = segment_and_resolve(self.encode(120, parents={73: 10}), "f")
        assert segs[1].nodes[23].parent_pos == 22

    def test_in_segment_parent_kept(self):
        segs = segment_and_resolve(self.encode(120, parents={55: 52}), "f")
        assert segs[1].nodes[5].parent_pos == 2

    def test_segment_start_has_no_parent(self):
        segs = segment_and_resolve(self.encode(120), "f")
        for seg in segs:
            assert seg.nodes[0].parent_pos is None

    def test_short_file_single_segment(self):
        segs = segment_and_resolve(self.encode(7), "f")
        assert len(segs) == 1 and len(segs[0]) == 7


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 260))
def test_segmentation_conserves_the_sequence(n):
    encoded = [(i % 7, i % 11 + 2, None if i == 0 else (i - 1) // 2) for i in range(n)]
    segs = segment_and_resolve(encoded, "f")
    rebuilt = [(node.type_id, node.value_id) for seg in segs for node in seg.nodes]
    assert rebuilt == [(t, v) for t, v, _ in encoded]
    assert all(len(seg) == 50 for seg in segs[:-1])
    for seg in segs:
        for pos, node in enumerate(seg.nodes):
            assert node.parent_pos is None if pos == 0 else 0 <= node.parent_pos < pos


class TestDatasetFiles:
    def test_segments_roundtrip(self, tmp_path):
        vocab = build_vocab([[("T", "a"), ("U", "b")]], k=4)
        segs = segment_and_resolve([(0, 2, None), (1, 3, 0)], "file-1")
        path = tmp_path / "segments.jsonl"
        header = write_segments(path, segs, vocab)
        got_header, got = read_segments(path)
        assert got_header["value_vocab_hash"] == header["value_vocab_hash"]
        assert got[0].nodes == [FlatNode(0, 2, None), FlatNode(1, 3, 0)]

    def test_vocab_roundtrip(self, tmp_path):
        vocab = build_vocab([[("T", "a")]], k=4)
        path = tmp_path / "vocab.json"
        write_vocab(path, vocab)
        got = load_vocab(path)
        assert got.values == vocab.values and got.types == vocab.types and got.k == vocab.k

    def test_preprocess_end_to_end(self, tmp_path):
        corpus = tmp_path / "corpus.jsonl"
        corpus.write_text(
            json.dumps([{"type": "Module", "children": [1]}, {"type": "NameLoad", "value": "a"}])
            + "\n"
            + json.dumps([{"type": "Module", "children": [1]}, {"type": "NameLoad", "value": "b"}])
            + "\n"
        )
        stats = preprocess_corpus(corpus, tmp_path / "out", k=1)
        assert stats["num_files"] == 2
        assert stats["num_segments"] == 2
        vocab = load_vocab(tmp_path / "out" / "vocab.json")
        assert vocab.values == [EMPTY, UNK, "a"]  # b lost the first-appearance tie
        assert stats["unk_rate"] == pytest.approx(0.25)

    def test_preprocess_is_deterministic(self, tmp_path):
        corpus = tmp_path / "corpus.jsonl"
        corpus.write_text(json.dumps([{"type": "M", "children": [1]},
                                      {"type": "N", "value": "v"}]) + "\n")
        preprocess_corpus(corpus, tmp_path / "o1", k=3)
        preprocess_corpus(corpus, tmp_path / "o2", k=3)
        assert (tmp_path / "o1" / "segments.jsonl").read_bytes() == (tmp_path / "o2" / "segments.jsonl").read_bytes()
        assert (tmp_path / "o1" / "vocab.json").read_bytes() == (tmp_path / "o2" / "vocab.json").read_bytes()

    def test_corrupt_line_is_named(self, tmp_path):
        corpus = tmp_path / "corpus.jsonl"
        good = json.dumps([{"type": "M"}])
        corpus.write_text(good + "\n" + "{broken\n")
        with pytest.raises(AstParseError, match="line 2"):
            preprocess_corpus(corpus, tmp_path / "out", k=1)
