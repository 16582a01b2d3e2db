"""Latent-variable inside-outside parsing, pruning and MBR decoding.

Charts hold inside and outside vectors over flattened (symbol, state)
pairs. Each cell keeps its vector normalized to max 1 alongside a log scale,
so long sentences do not underflow.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grammar import LatentGrammar, word_signature
from .trees import JOIN, Tree, debinarize

PRUNE_THRESHOLD = 0.00005
TIE_EPS = 1e-12
NEG_INF = -math.inf


class UnparseableError(ValueError):
    pass


def tag_of(symbol: str) -> str:
    """The POS tag a preterminal symbol covers (last link of a unary chain)."""
    return symbol.split(JOIN)[-1]


class CompiledGrammar:
    """Array form of a :class:`LatentGrammar` for chart parsing."""

    def __init__(self, grammar: LatentGrammar):
        syms = grammar.symbols
        self.grammar = grammar
        self.names = list(syms.nonterminals)
        self.interminal = np.array(syms.interminal, dtype=bool)
        self.m = np.array([grammar.m[a] for a in self.names], dtype=np.int64)
        self.offset = np.concatenate([[0], np.cumsum(self.m)]).astype(np.int64)
        self.S = int(self.offset[-1])
        self.sym_of_state = np.repeat(np.arange(len(self.names)), self.m)
        sid = syms.symbol_id
        S = self.S

        def st(a, h):
            return int(self.offset[sid[a]]) + h

        self.root = np.zeros(S)
        for (a, h), p in grammar.root.items():
            self.root[st(a, h)] = p
        rows, cols, vals = [], [], []
        for (a, h1, b, h2, c, h3), p in grammar.binary.items():
            if p > 0:
                rows.append(st(a, h1))
                cols.append(st(b, h2) * S + st(c, h3))
                vals.append(p)
        self.rules = sp.csr_matrix((vals, (rows, cols)), shape=(S, S * S))
        self.rules.sum_duplicates()
        self.rules_t = self.rules.T.tocsr()
        self.lex: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        acc: dict[str, tuple[list, list]] = {}
        for (a, h, w), p in grammar.lexical.items():
            if p > 0:
                ii, vv = acc.setdefault(w, ([], []))
                ii.append(st(a, h))
                vv.append(p)
        for w, (ii, vv) in acc.items():
            self.lex[w] = (np.array(ii, dtype=np.int64), np.array(vv))
        self.by_tag: dict[str, np.ndarray] = {}
        for a_id, a in enumerate(self.names):
            if not self.interminal[a_id]:
                t = tag_of(a)
                states = np.arange(self.offset[a_id], self.offset[a_id + 1])
                self.by_tag[t] = np.concatenate([self.by_tag.get(t, np.zeros(0, np.int64)), states])
        self.signatures = grammar.meta.get("unk_threshold", "0") not in ("0", "")

    def lexical_vector(self, word: str, tag: str) -> np.ndarray:
        allowed = self.by_tag.get(tag)
        if allowed is None:
            raise UnparseableError(f"unknown tag {tag!r}")
        mask = np.zeros(self.S, dtype=bool)
        mask[allowed] = True
        v = self._lex(word, mask)
        if not v.any() and self.signatures:
            v = self._lex(word_signature(word), mask)
        return v

    def _lex(self, token, mask):
        v = np.zeros(self.S)
        entry = self.lex.get(token)
        if entry is not None:
            v[entry[0]] = entry[1]
            v[~mask] = 0.0
        return v


# --------------------------------------------------------------------------
# pruning

@dataclass
class PruneMask:
    """Admitted (symbol, i, j) spans from the base grammar's marginals."""
    symbols: list[str]
    allowed: np.ndarray  # (N+1, N+1, len(symbols)) bool

    def state_mask(self, cg: CompiledGrammar) -> np.ndarray:
        col = {a: i for i, a in enumerate(self.symbols)}
        n = self.allowed.shape[0]
        per_symbol = np.zeros((n, n, len(cg.names)), dtype=bool)
        for a_id, a in enumerate(cg.names):
            if a in col:
                per_symbol[:, :, a_id] = self.allowed[:, :, col[a]]
        return per_symbol[:, :, cg.sym_of_state]

    def count(self) -> int:
        return int(self.allowed.sum())


# --------------------------------------------------------------------------
# charts

@dataclass
class Chart:
    sentence: list[tuple[str, str]]
    symbols: list[str]
    interminal: np.ndarray
    inside: np.ndarray      # (N+1, N+1, S) normalized
    inside_log: np.ndarray  # (N+1, N+1) log scale
    outside: np.ndarray
    outside_log: np.ndarray
    log_z: float
    marginals: np.ndarray   # (N+1, N+1, n_symbols)

    @property
    def length(self) -> int:
        return len(self.sentence)

    @property
    def z(self) -> float:
        return math.exp(self.log_z)

    def marginal(self, a: str, i: int, j: int) -> float:
        return float(self.marginals[i, j, self.symbols.index(a)])

    def span_table(self, min_value: float = 0.0) -> dict[tuple[str, int, int], float]:
        """Nonzero marginals keyed by (symbol, i, j)."""
        out = {}
        for i, j, a in zip(*np.nonzero(self.marginals > min_value)):
            out[(self.symbols[a], int(i), int(j))] = float(self.marginals[i, j, a])
        return out


def _normalize(v: np.ndarray) -> tuple[np.ndarray, float]:
    mx = v.max() if v.size else 0.0
    if mx <= 0.0:
        return np.zeros_like(v), NEG_INF
    return v / mx, math.log(mx)


def _accumulate(vec: np.ndarray, logs: np.ndarray, i: int, j: int,
                contrib: np.ndarray, log_scale: float) -> None:
    cur = logs[i, j]
    if cur == NEG_INF:
        vec[i, j] = contrib
        logs[i, j] = log_scale
    elif log_scale > cur:
        vec[i, j] = vec[i, j] * math.exp(cur - log_scale) + contrib
        logs[i, j] = log_scale
    else:
        vec[i, j] += contrib * math.exp(log_scale - cur)


def inside_outside(grammar: LatentGrammar, sentence: list[tuple[str, str]],
                   mask: PruneMask | None = None) -> Chart:
    """Exact inside/outside sums over all derivations admitted by ``mask``.

    ``sentence`` is a list of (word, tag) pairs.
    """
    cg = grammar.compiled
    N, S = len(sentence), cg.S
    if N == 0:
        raise UnparseableError("empty sentence")
    allowed = mask.state_mask(cg) if mask is not None else None
    I = np.zeros((N + 1, N + 1, S))
    sI = np.full((N + 1, N + 1), NEG_INF)
    for i, (w, t) in enumerate(sentence):
        v = cg.lexical_vector(w, t)
        if allowed is not None:
            v = v * allowed[i, i + 1]
        I[i, i + 1], sI[i, i + 1] = _normalize(v)
    for span in range(2, N + 1):
        for i in range(N - span + 1):
            j = i + span
            ks = [k for k in range(i + 1, j) if sI[i, k] > NEG_INF and sI[k, j] > NEG_INF]
            if not ks:
                continue
            ks = np.array(ks)
            logs = sI[i, ks] + sI[ks, j]
            base = logs.max()
            w = np.exp(logs - base)
            M = (I[i, ks] * w[:, None]).T @ I[ks, j]
            v = cg.rules @ M.ravel()
            if allowed is not None:
                v = v * allowed[i, j]
            I[i, j], s = _normalize(v)
            sI[i, j] = base + s if s > NEG_INF else NEG_INF
    top = float(cg.root @ I[0, N])
    if top <= 0.0 or sI[0, N] == NEG_INF:
        raise UnparseableError("sentence has no derivation")
    log_z = sI[0, N] + math.log(top)

    O = np.zeros((N + 1, N + 1, S))
    sO = np.full((N + 1, N + 1), NEG_INF)
    O[0, N], sO[0, N] = _normalize(cg.root.copy())
    for span in range(N, 1, -1):
        for i in range(N - span + 1):
            j = i + span
            if sO[i, j] == NEG_INF or sI[i, j] == NEG_INF:
                continue
            W = (cg.rules_t @ O[i, j]).reshape(S, S)  # W[l, r] = sum_p o_p R[p, l, r]
            for k in range(i + 1, j):
                if sI[i, k] == NEG_INF or sI[k, j] == NEG_INF:
                    continue
                left = W @ I[k, j]
                right = W.T @ I[i, k]
                if allowed is not None:
                    left = left * allowed[i, k]
                    right = right * allowed[k, j]
                _accumulate(O, sO, i, k, left, sO[i, j] + sI[k, j])
                _accumulate(O, sO, k, j, right, sO[i, j] + sI[i, k])
    prod = I * O
    with np.errstate(invalid="ignore"):
        scale = np.exp(np.where((sI > NEG_INF) & (sO > NEG_INF), sI + sO - log_z, NEG_INF))
    per_state = prod * scale[:, :, None]
    mu = np.add.reduceat(per_state, cg.offset[:-1], axis=2) if S else per_state
    return Chart(list(sentence), cg.names, cg.interminal, I, sI, O, sO, log_z, mu)


def prune_mask(base: LatentGrammar, sentence, threshold: float = PRUNE_THRESHOLD) -> PruneMask:
    """Admit (a, i, j) iff the base grammar's marginal is nonzero and >= threshold."""
    chart = inside_outside(base, sentence)
    mu = chart.marginals
    return PruneMask(list(chart.symbols), (mu >= threshold) & (mu > 0.0))


# --------------------------------------------------------------------------
# decoding

def _argmax_first(values: np.ndarray) -> int:
    mx = values.max()
    return int(np.flatnonzero(values >= mx - TIE_EPS * max(1.0, abs(mx)))[0])


def span_dp(length: int, score, preterminals: np.ndarray, interminals: np.ndarray):
    """Best binary bracketing under an additive span score.

    ``score(i, j)`` returns the per-label score vector for span (i, j); labels
    for length-1 spans come from ``preterminals`` and longer spans from
    ``interminals`` (both arrays of label ids in tie-break order). Ties go to
    the lower split point, then the lower label id.

    Returns (objective, back) where back[(i, j)] = (label id, split or None).
    """
    best = {}
    back = {}
    for i in range(length):
        sc = score(i, i + 1)[preterminals]
        k = _argmax_first(sc)
        best[i, i + 1] = float(sc[k])
        back[i, i + 1] = (int(preterminals[k]), None)
    for span in range(2, length + 1):
        for i in range(length - span + 1):
            j = i + span
            sc = score(i, j)[interminals]
            a = _argmax_first(sc)
            splits = np.array([best[i, k] + best[k, j] for k in range(i + 1, j)])
            k = _argmax_first(splits)
            best[i, j] = float(sc[a]) + float(splits[k])
            back[i, j] = (int(interminals[a]), i + 1 + k)
    return best[0, length], back


def build_tree(back, labels: list[str], words: list[str], i: int, j: int) -> Tree:
    lab, k = back[i, j]
    if k is None:
        return Tree(labels[lab], word=words[i])
    return Tree(labels[lab], (build_tree(back, labels, words, i, k),
                              build_tree(back, labels, words, k, j)))


def mbr_decode(chart: Chart) -> Tree:
    """Binarized tree maximizing the summed span marginals (labelled recall)."""
    ids = np.arange(len(chart.symbols))
    _, back = span_dp(chart.length, lambda i, j: chart.marginals[i, j],
                      ids[~chart.interminal], ids[chart.interminal])
    return build_tree(back, chart.symbols, [w for w, _ in chart.sentence], 0, chart.length)


def mbr_objective(chart: Chart, tree: Tree) -> float:
    from .trees import tree_spans
    col = {a: i for i, a in enumerate(chart.symbols)}
    total = 0.0
    for (a, i, j), n in tree_spans(tree).items():
        if a in col:
            total += n * float(chart.marginals[i, j, col[a]])
    return total


def viterbi(grammar: LatentGrammar, sentence) -> tuple[Tree, float]:
    """Most probable annotated derivation, returned as its skeletal tree."""
    cg = grammar.compiled
    N, S = len(sentence), cg.S
    coo = cg.rules.tocoo()
    rows, lft, rgt, data = coo.row, coo.col // S, coo.col % S, coo.data
    V = np.zeros((N + 1, N + 1, S))
    sV = np.full((N + 1, N + 1), NEG_INF)
    bp = {}
    for i, (w, t) in enumerate(sentence):
        V[i, i + 1], sV[i, i + 1] = _normalize(cg.lexical_vector(w, t))
    for span in range(2, N + 1):
        for i in range(N - span + 1):
            j = i + span
            best = np.zeros(S)
            best_log = NEG_INF
            arg = np.full((S, 3), -1)
            for k in range(i + 1, j):
                if sV[i, k] == NEG_INF or sV[k, j] == NEG_INF:
                    continue
                log_k = sV[i, k] + sV[k, j]
                vals = data * V[i, k, lft] * V[k, j, rgt]
                cand = np.zeros(S)
                np.maximum.at(cand, rows, vals)
                if best_log == NEG_INF:
                    factor_old, factor_new, best_log = 0.0, 1.0, log_k
                elif log_k > best_log:
                    factor_old, factor_new, best_log = math.exp(best_log - log_k), 1.0, log_k
                else:
                    factor_old, factor_new = 1.0, math.exp(log_k - best_log)
                best = best * factor_old
                cand = cand * factor_new
                better = cand > best
                if better.any():
                    hit = vals * factor_new == cand[rows]
                    for p in np.flatnonzero(better):
                        e = np.flatnonzero(hit & (rows == p))[0]
                        arg[p] = (k, lft[e], rgt[e])
                    best = np.where(better, cand, best)
            V[i, j], s = _normalize(best)
            sV[i, j] = best_log + s if s > NEG_INF else NEG_INF
            bp[i, j] = arg
    top = cg.root * V[0, N]
    if top.max() <= 0:
        raise UnparseableError("sentence has no derivation")
    p = int(np.argmax(top))
    words = [w for w, _ in sentence]

    def build(i, j, p):
        name = cg.names[cg.sym_of_state[p]]
        if j == i + 1:
            return Tree(name, word=words[i])
        k, l, r = bp[i, j][p]
        return Tree(name, (build(i, k, l), build(k, j, r)))

    return build(0, N, p), sV[0, N] + math.log(top[p])


def fallback_tree(sentence) -> Tree:
    """Right-branching flat tree labeled X, used when nothing parses."""
    leaves = [Tree(t, word=w) for w, t in sentence]
    node = leaves[-1]
    for leaf in reversed(leaves[:-1]):
        node = Tree("X", (leaf, node))
    return node if len(leaves) > 1 else Tree("X", (node,))


def parse(grammar: LatentGrammar, base: LatentGrammar | None, sentence,
          threshold: float = PRUNE_THRESHOLD) -> tuple[Tree, Chart]:
    """Prune with ``base``, run inside-outside, MBR-decode and debinarize.

    A pruned chart without a derivation is retried unpruned.
    """
    chart = None
    if base is not None:
        try:
            chart = inside_outside(grammar, sentence, prune_mask(base, sentence, threshold))
        except UnparseableError:
            chart = None
    if chart is None:
        chart = inside_outside(grammar, sentence)
    return debinarize(mbr_decode(chart)), chart


def tree_log_likelihood(grammar: LatentGrammar, tree: Tree) -> float:
    """log p(skeletal tree), summing over latent states on that tree only."""
    cg = grammar.compiled
    sid = grammar.symbols.symbol_id
    S = cg.S

    def states_of(label):
        if label not in sid:
            raise UnparseableError(f"unknown symbol {label!r}")
        a = sid[label]
        mask = np.zeros(S, dtype=bool)
        mask[cg.offset[a]:cg.offset[a + 1]] = True
        return mask

    def up(node: Tree) -> tuple[np.ndarray, float]:
        mask = states_of(node.label)
        if node.word is not None:
            v = cg._lex(node.word, mask)
            if not v.any() and cg.signatures:
                v = cg._lex(word_signature(node.word), mask)
            return _normalize(v)
        if len(node.children) != 2:
            raise ValueError("tree is not binarized")
        (vl, sl), (vr, sr) = up(node.children[0]), up(node.children[1])
        v = cg.rules @ np.outer(vl, vr).ravel()
        v[~mask] = 0.0
        vec, s = _normalize(v)
        return vec, (sl + sr + s) if s > NEG_INF else NEG_INF

    vec, s = up(tree)
    top = float(cg.root @ vec)
    if top <= 0.0 or s == NEG_INF:
        return NEG_INF
    return s + math.log(top)
