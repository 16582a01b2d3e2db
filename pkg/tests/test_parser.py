import math
import random

import numpy as np
import pytest

from oracles import (brute_force_argmax, enumerate_annotations, labeled_trees,
                     random_small_grammar, random_sentence)
from lpcfg.grammar import AnnotatedTree, LatentGrammar, MissingRuleError, SymbolTable, tree_log_prob
from lpcfg.parser import (UnparseableError, fallback_tree, inside_outside, mbr_decode,
                          mbr_objective, parse, prune_mask, tree_log_likelihood, viterbi)
from lpcfg.trees import Tree, parse_bracketed


def test_g0_chart(g0):
    chart = inside_outside(g0, [("a", "A"), ("b", "A")])
    assert chart.z == pytest.approx(0.24, rel=1e-12)
    assert chart.marginal("S", 0, 2) == pytest.approx(1.0)
    assert str(mbr_decode(chart)) == "(S (A a) (A b))"


def test_inside_outside_matches_brute_force(exact_instances):
    worst = 0.0
    for g, sent, z, mu in exact_instances:
        chart = inside_outside(g, sent)
        worst = max(worst, abs(chart.z - z) / z)
        table = chart.span_table()
        for key in set(table) | set(mu):
            ref = mu.get(key, 0.0)
            got = table.get(key, 0.0)
            worst = max(worst, abs(got - ref) / ref if ref else got)
    assert worst < 1e-10


def test_mbr_matches_brute_force(exact_instances):
    for g, sent, _, mu in exact_instances:
        chart = inside_outside(g, sent)
        order = {a: i for i, a in enumerate(g.symbols.nonterminals)}
        want, val = brute_force_argmax([w for w, _ in sent], g.symbols.interminals,
                                       g.symbols.preterminals, mu, order)
        got = mbr_decode(chart)
        assert got == want
        assert mbr_objective(chart, got) == pytest.approx(val, rel=1e-10)


def test_marginals_are_consistent(exact_instances):
    for g, sent, _, _ in exact_instances[:50]:
        chart = inside_outside(g, sent)
        n = len(sent)
        assert chart.marginals[0, n].sum() == pytest.approx(1.0)
        for i in range(n):
            assert chart.marginals[i, i + 1].sum() == pytest.approx(1.0)
        # every tree has exactly 2n - 1 nodes
        assert chart.marginals.sum() == pytest.approx(2 * n - 1)


def test_unparseable_sentence():
    rng = random.Random(5)
    g = random_small_grammar(rng)
    with pytest.raises(UnparseableError):
        inside_outside(g, [(g.symbols.vocabulary[0], g.symbols.preterminals[0])])
    with pytest.raises(UnparseableError, match="unknown tag"):
        inside_outside(g, [("w0", "NOPE"), ("w0", "NOPE")])
    with pytest.raises(UnparseableError):
        inside_outside(g, [])


def _ambiguous(p_a=1.0):
    syms = SymbolTable(["X", "P"], [True, False], ["a", "b"])
    return LatentGrammar(syms, {"X": 1, "P": 1}, {("X", 0): 1.0},
                         {("X", 0, "X", 0, "P", 0): 0.25, ("X", 0, "P", 0, "X", 0): 0.25,
                          ("X", 0, "P", 0, "P", 0): 0.5},
                         {("P", 0, "a"): p_a, ("P", 0, "b"): 1.0 - p_a})


def test_mbr_ties_go_to_lower_split():
    chart = inside_outside(_ambiguous(), [("a", "P")] * 3)
    assert chart.marginal("X", 0, 2) == pytest.approx(chart.marginal("X", 1, 3))
    assert str(mbr_decode(chart)) == "(X (P a) (X (P a) (P a)))"


def test_long_sentence_does_not_underflow():
    # Z is about 1e-480, far below the smallest double
    g = _ambiguous(p_a=1e-8)
    chart = inside_outside(g, [("a", "P")] * 60)
    assert math.isfinite(chart.log_z) and chart.log_z < -400 * math.log(10)
    assert chart.marginals[0, 60].sum() == pytest.approx(1.0)
    assert chart.marginals.sum() == pytest.approx(119)


def test_pruning_removes_low_marginal_spans():
    g = _ambiguous()
    sent = [("a", "P")] * 5
    mask = prune_mask(g, sent, threshold=0.2)
    chart = inside_outside(g, sent, mask)
    full = inside_outside(g, sent)
    mu_full = full.marginals[..., 0]
    assert (chart.marginals[..., 0][mu_full < 0.2] == 0).all()
    assert mask.count() < (full.marginals > 0).sum()
    # a permissive mask changes nothing
    open_chart = inside_outside(g, sent, prune_mask(g, sent, threshold=0.0))
    assert np.allclose(open_chart.marginals, full.marginals)


def test_parse_retries_without_pruning_when_pruned_chart_is_empty(g0):
    sent = [("a", "A"), ("b", "A")]
    tree, chart = parse(g0, g0, sent, threshold=1.1)
    assert str(tree) == "(S (A a) (A b))" and chart.z == pytest.approx(0.24)


def test_parse_debinarizes():
    syms = SymbolTable(["S", "@S", "A"], [True, True, False], ["a"])
    g = LatentGrammar(syms, {"S": 1, "@S": 1, "A": 1}, {("S", 0): 1.0},
                      {("S", 0, "A", 0, "@S", 0): 1.0, ("@S", 0, "A", 0, "A", 0): 1.0},
                      {("A", 0, "a"): 1.0})
    tree, _ = parse(g, None, [("a", "A")] * 3)
    assert str(tree) == "(S (A a) (A a) (A a))"


def test_unary_chain_preterminals_match_their_last_tag():
    syms = SymbolTable(["S", "NP+N", "V"], [True, False, False], ["dogs", "bark"])
    g = LatentGrammar(syms, {"S": 1, "NP+N": 1, "V": 1}, {("S", 0): 1.0},
                      {("S", 0, "NP+N", 0, "V", 0): 1.0},
                      {("NP+N", 0, "dogs"): 1.0, ("V", 0, "bark"): 1.0})
    tree, _ = parse(g, None, [("dogs", "N"), ("bark", "V")])
    assert str(tree) == "(S (NP (N dogs)) (V bark))"


def test_unknown_words_back_off_to_signatures():
    syms = SymbolTable(["S", "A"], [True, False], ["a", "UNK-ing"])
    rules = ({("S", 0): 1.0}, {("S", 0, "A", 0, "A", 0): 1.0},
             {("A", 0, "a"): 0.5, ("A", 0, "UNK-ing"): 0.5})
    with_sig = LatentGrammar(syms, {"S": 1, "A": 1}, *rules, meta={"unk_threshold": "5"})
    chart = inside_outside(with_sig, [("a", "A"), ("running", "A")])
    assert chart.z == pytest.approx(0.25)
    without = LatentGrammar(syms, {"S": 1, "A": 1}, *rules)
    with pytest.raises(UnparseableError):
        inside_outside(without, [("a", "A"), ("running", "A")])


def test_viterbi_matches_brute_force():
    rng = random.Random(21)
    done = 0
    while done < 30:
        g = random_small_grammar(rng, max_m=2)
        sent = random_sentence(rng, g, max_len=4)
        words = [w for w, _ in sent]
        leaves = [[a for a in g.symbols.preterminals if a == t] for _, t in sent]
        best, best_lp = None, -math.inf
        for tree in labeled_trees(words, g.symbols.interminals, leaves):
            for states in enumerate_annotations(g, tree):
                try:
                    lp = tree_log_prob(g, AnnotatedTree(tree, states))
                except MissingRuleError:
                    continue
                if lp > best_lp:
                    best, best_lp = tree, lp
        if best is None:
            with pytest.raises(UnparseableError):
                viterbi(g, sent)
            continue
        done += 1
        tree, lp = viterbi(g, sent)
        assert lp == pytest.approx(best_lp, rel=1e-10)


def test_tree_log_likelihood_on_g0(g0):
    t = parse_bracketed("(S (A a) (A b))")[0]
    assert tree_log_likelihood(g0, t) == pytest.approx(math.log(0.24))
    assert tree_log_likelihood(g0, parse_bracketed("(S (A a) (A c))")[0]) == -math.inf


def test_fallback_tree():
    assert str(fallback_tree([("a", "D"), ("b", "N"), ("c", "V")])) == \
        "(X (D a) (X (N b) (V c)))"
    assert str(fallback_tree([("a", "D")])) == "(X (D a))"
