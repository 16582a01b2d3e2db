import random

import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_raw_tree, raw_trees
from lpcfg.trees import (NodeTable, Tree, TreeFormatError, binarize, debinarize, decompose,
                         format_tagged, parse_bracketed, parse_tagged, read_treebank,
                         strip_annotations, tree_spans, write_treebank)

DOG_TREE = "(S (NP (D the) (N dog)) (VP (V saw) (NP (D the) (N cat))))"


def test_parse_and_print_round_trip():
    t = parse_bracketed(DOG_TREE)[0]
    assert str(t) == DOG_TREE
    assert t.words() == ["the", "dog", "saw", "the", "cat"]
    assert t.leaves()[2] == ("saw", "V")


def test_ptb_wrapper_is_unwrapped():
    assert str(parse_bracketed("( (S (A a) (B b)) )")[0]) == "(S (A a) (B b))"


def test_multiline_and_several_trees():
    trees = parse_bracketed("(S (A a)\n   (B b))\n(A c)")
    assert [str(t) for t in trees] == ["(S (A a) (B b))", "(A c)"]


@pytest.mark.parametrize("text,where", [
    ("(S (A a)", "line 1, column 1"),
    ("(S (A a)))", "line 1, column 10"),
    ("(S\n (A a b))", "line 2, column 2"),
    ("(S ())", "column 4"),
])
def test_parse_errors_name_position(text, where):
    with pytest.raises(TreeFormatError, match=where):
        parse_bracketed(text)


def test_strip_annotations():
    t = parse_bracketed("(S (NP-SBJ-1 (-NONE- *T*)) (NP=2 (N dog)) (VP (V barks)))")[0]
    assert str(strip_annotations(t)) == "(S (NP (N dog)) (VP (V barks)))"
    assert strip_annotations(parse_bracketed("(X (-NONE- *))")[0]) is None
    assert str(strip_annotations(parse_bracketed("(X (-LRB- -LRB-))")[0])) == "(X (-LRB- -LRB-))"


def test_treebank_file_round_trip(tmp_path):
    trees = parse_bracketed(DOG_TREE + " (S (A a) (A b))")
    write_treebank(tmp_path / "t.mrg", trees)
    assert read_treebank(tmp_path / "t.mrg") == trees


@given(st.lists(st.tuples(st.text(min_size=1, alphabet="ab_\\c"),
                          st.text(min_size=1, alphabet="XY_\\")), min_size=1))
def test_tagged_format_round_trip(sentence):
    assert parse_tagged(format_tagged(sentence)) == sentence


def test_tagged_errors():
    with pytest.raises(TreeFormatError):
        parse_tagged("dog")
    with pytest.raises(TreeFormatError):
        parse_tagged("dog_")


def test_binarize_examples():
    t = parse_bracketed("(S (NP (N dogs)) (VP (V bark) (ADV loud) (ADV ly)))")[0]
    b = binarize(t)
    assert str(b) == "(S (NP+N dogs) (VP (V bark) (@VP (ADV loud) (ADV ly))))"
    assert debinarize(b) == t
    root_unary = parse_bracketed("(TOP (S (A a) (B b) (C c)))")[0]
    assert str(binarize(root_unary)) == "(TOP+S (A a) (@S (B b) (C c)))"


def test_binarize_rejects_marker_labels():
    with pytest.raises(TreeFormatError):
        binarize(parse_bracketed("(@X (A a) (B b))")[0])
    with pytest.raises(TreeFormatError):
        binarize(parse_bracketed("(X+Y (A a) (B b))")[0])


def test_debinarize_malformed_markers():
    with pytest.raises(TreeFormatError):
        debinarize(parse_bracketed("(S+ (A a) (B b))")[0])
    with pytest.raises(TreeFormatError):
        debinarize(parse_bracketed("(S (A a) (@X+@Y (B b) (C c)))")[0])


def test_debinarize_renames_intermediate_root():
    assert str(debinarize(parse_bracketed("(@VP (A a) (B b))")[0])) == "(VP (A a) (B b))"


@given(raw_trees())
@settings(max_examples=300)
def test_binarized_trees_are_binary_and_invert(tree):
    b = binarize(tree)
    for node in b.subtrees():
        assert node.word is not None or len(node.children) == 2
    assert debinarize(b) == tree
    assert b.words() == tree.words()


def test_binarize_round_trip_1000_random_trees():
    rng = random.Random(7)
    for _ in range(1000):
        t = random_raw_tree(rng)
        assert debinarize(binarize(t)) == t


def test_tree_spans():
    assert tree_spans(parse_bracketed("(S (A a) (A b))")[0]) == {
        ("S", 0, 2): 1, ("A", 0, 1): 1, ("A", 1, 2): 1}
    assert tree_spans(Tree("A", word="a")) == {("A", 0, 1): 1}
    spans = tree_spans(parse_bracketed(DOG_TREE)[0])
    # the displayed five-word bracketing puts the VP over tokens 2..5
    assert spans[("VP", 2, 5)] == 1 and spans[("S", 0, 5)] == 1
    b = binarize(parse_bracketed("(X (A a) (B b) (C c))")[0])
    assert ("@X", 1, 3) in tree_spans(b)
    assert ("@X", 1, 3) not in tree_spans(b, include_intermediates=False)


def test_node_table_and_outside_rendering():
    tab = NodeTable.build(parse_bracketed(DOG_TREE)[0])
    assert tab.length == 5 and len(tab) == 9
    vp = tab.labels.index("VP")
    assert tab.spans[vp] == (2, 5)
    assert tab.subtree(vp) == "(VP (V saw) (NP (D the) (N cat)))"
    assert tab.outside(vp) == "(S (NP (D the) (N dog)) VP*)"
    assert tab.outside(0) == "S*"
    assert tab.tags() == ["D", "N", "V", "D", "N"]


def test_decompose_one_record_per_node():
    trees = [binarize(t) for t in parse_bracketed(DOG_TREE + " (S (A a) (A b))")]
    recs = decompose(trees)
    assert len(recs) == sum(len(t) for t in trees)
    assert [r.is_root for r in recs].count(True) == 2
    assert recs[0].symbol == "S" and recs[0].is_root
