"""Synthetic L-PCFGs and treebanks sampled from them."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grammar import AnnotatedTree, LatentGrammar, SymbolTable
from .trees import Tree

MAX_DEPTH = 25


class DepthExceeded(RuntimeError):
    pass


@dataclass
class SynthSpec:
    interminals: int = 3
    preterminals: int = 3
    m: int = 2
    vocab: int = 6
    seed: int = 0
    concentration: float = 0.5
    stop_bias: float = 3.0


def random_grammar(spec: SynthSpec) -> LatentGrammar:
    """Random L-PCFG with Dirichlet-distributed rule blocks.

    Interminals are ``N0..``, preterminals ``T0..``, words ``w0..``. Rules
    whose children are both preterminals get ``stop_bias`` extra prior mass so
    sampled trees stay shallow.
    """
    rng = np.random.default_rng(spec.seed)
    inter = [f"N{i}" for i in range(spec.interminals)]
    pre = [f"T{i}" for i in range(spec.preterminals)]
    words = [f"w{i}" for i in range(spec.vocab)]
    syms = SymbolTable(inter + pre, [True] * len(inter) + [False] * len(pre), words)
    m = {a: spec.m for a in syms.nonterminals}
    child_states = [(b, hb) for b in syms.nonterminals for hb in range(spec.m)]
    rhs = [(l, r) for l in child_states for r in child_states]
    alpha = np.array([spec.concentration * (1.0 + spec.stop_bias * (l[0] in pre and r[0] in pre))
                      for l, r in rhs])
    binary = {}
    for a in inter:
        for h in range(spec.m):
            probs = rng.dirichlet(alpha)
            for (l, r), p in zip(rhs, probs):
                if p > 0:
                    binary[(a, h, l[0], l[1], r[0], r[1])] = float(p)
    lexical = {}
    for a in pre:
        for h in range(spec.m):
            probs = rng.dirichlet(np.full(len(words), spec.concentration))
            for w, p in zip(words, probs):
                if p > 0:
                    lexical[(a, h, w)] = float(p)
    roots = [(a, h) for a in inter for h in range(spec.m)]
    rp = rng.dirichlet(np.ones(len(roots)))
    root = {k: float(p) for k, p in zip(roots, rp) if p > 0}
    return LatentGrammar(syms, m, root, binary, lexical, {"synth_seed": str(spec.seed)})


class Sampler:
    """Top-down sampling of annotated trees from a grammar."""

    def __init__(self, grammar: LatentGrammar):
        self.grammar = grammar
        self.rules: dict[tuple, tuple[list, np.ndarray]] = {}
        for key, p in grammar.binary.items():
            self._add(key[:2], key[2:], p)
        for (a, h, w), p in grammar.lexical.items():
            self._add((a, h), (w,), p)
        self.rules = {k: (opts, np.cumsum(ps) / np.sum(ps)) for k, (opts, ps) in self.rules.items()}
        keys = sorted(grammar.root, key=lambda k: (grammar.symbols.symbol_id[k[0]], k[1]))
        ps = np.array([grammar.root[k] for k in keys])
        self.roots = (keys, np.cumsum(ps) / ps.sum())

    def _add(self, lhs, rhs, p):
        opts, ps = self.rules.setdefault(lhs, ([], []))
        opts.append(rhs)
        ps.append(p)

    @staticmethod
    def _pick(options, cdf, rng):
        return options[min(int(np.searchsorted(cdf, rng.random(), side="right")), len(options) - 1)]

    def sample(self, rng: np.random.Generator) -> AnnotatedTree:
        """One tree; resamples whenever the depth cap is exceeded."""
        while True:
            try:
                states: list[int] = []
                a, h = self._pick(*self.roots, rng)
                tree = self._expand(a, h, 1, rng, states)
                return AnnotatedTree(tree, tuple(states))
            except DepthExceeded:
                continue

    def _expand(self, a, h, depth, rng, states) -> Tree:
        if depth > MAX_DEPTH:
            raise DepthExceeded
        states.append(h)
        opts, cdf = self.rules[(a, h)]
        rhs = self._pick(opts, cdf, rng)
        if len(rhs) == 1:
            return Tree(a, word=rhs[0])
        b, hb, c, hc = rhs
        left = self._expand(b, hb, depth + 1, rng, states)
        right = self._expand(c, hc, depth + 1, rng, states)
        return Tree(a, (left, right))


def sample_treebank(grammar: LatentGrammar, n: int, seed: int,
                    max_len: int | None = None) -> list[AnnotatedTree]:
    """``n`` annotated trees; with ``max_len`` longer sentences are redrawn."""
    rng = np.random.default_rng(seed)
    sampler = Sampler(grammar)
    out = []
    while len(out) < n:
        t = sampler.sample(rng)
        if max_len is None or len(t.tree.words()) <= max_len:
            out.append(t)
    return out


def planted_grammar(words_per_class: int = 5) -> LatentGrammar:
    """Grammar whose verb class decides PP attachment.

    Every sentence has the tags ``D N V D N P D N``. Class-0 verbs
    (``v0..``) take the PP at the VP level, class-1 verbs attach it to the
    object NP. Both attachments are equally likely, so a grammar without
    latent states cannot tell them apart. No symbol needs more than two
    states.
    """
    pre = ["D", "N", "V", "P"]
    inter = ["S", "NP", "VP", "PP"]
    n = words_per_class
    dets = [f"d{i}" for i in range(3)]
    nouns = [f"n{i}" for i in range(2 * n)]
    verbs = [f"v{i}" for i in range(2 * n)]
    preps = [f"p{i}" for i in range(3)]
    syms = SymbolTable(inter + pre, [True] * 4 + [False] * 4, dets + nouns + verbs + preps)
    m = {"S": 1, "NP": 2, "VP": 2, "PP": 1, "D": 1, "N": 1, "V": 2, "P": 1}
    root = {("S", 0): 1.0}
    binary = {
        ("S", 0, "NP", 0, "VP", 0): 1.0,
        ("VP", 0, "VP", 1, "PP", 0): 0.5,  # VP-level attachment
        ("VP", 0, "V", 1, "NP", 1): 0.5,   # NP-level attachment
        ("VP", 1, "V", 0, "NP", 0): 1.0,
        ("NP", 0, "D", 0, "N", 0): 1.0,
        ("NP", 1, "NP", 0, "PP", 0): 1.0,
        ("PP", 0, "P", 0, "NP", 0): 1.0,
    }
    lexical = {}
    for w in dets:
        lexical[("D", 0, w)] = 1.0 / len(dets)
    for w in nouns:
        lexical[("N", 0, w)] = 1.0 / len(nouns)
    for w in preps:
        lexical[("P", 0, w)] = 1.0 / len(preps)
    for i, w in enumerate(verbs):
        lexical[("V", i // n, w)] = 1.0 / n
    return LatentGrammar(syms, m, root, binary, lexical, {"planted": "pp-attachment"})
