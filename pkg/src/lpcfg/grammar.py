"""Latent-variable PCFG object model, validation and text serialization."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from collections import defaultdict

from .trees import NodeTable, Tree

FORMAT = """Grammar files are line oriented, whitespace separated:

    lpcfg-grammar 1
    meta KEY VALUE                 free-form header (seeds, noise spec)
    symbol NAME I|P M              symbol table in id order with its state count
    word WORD                      vocabulary in id order
    root A H P
    binary A H1 B H2 C H3 P
    lex A H WORD P

Probabilities are written with repr(), so reading a file and writing it again
reproduces it byte for byte."""


class MissingRuleError(KeyError):
    pass


@dataclass
class SymbolTable:
    nonterminals: list[str] = field(default_factory=list)
    interminal: list[bool] = field(default_factory=list)
    vocabulary: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.symbol_id = {a: i for i, a in enumerate(self.nonterminals)}
        self.word_id = {w: i for i, w in enumerate(self.vocabulary)}
        if len(self.symbol_id) != len(self.nonterminals):
            raise ValueError("duplicate nonterminal")
        if len(self.word_id) != len(self.vocabulary):
            raise ValueError("duplicate word")

    def add_symbol(self, name: str, interminal: bool) -> int:
        idx = self.symbol_id.get(name)
        if idx is None:
            idx = self.symbol_id[name] = len(self.nonterminals)
            self.nonterminals.append(name)
            self.interminal.append(interminal)
        elif self.interminal[idx] != interminal:
            raise ValueError(f"symbol {name!r} used both as interminal and preterminal")
        return idx

    def add_word(self, word: str) -> int:
        idx = self.word_id.get(word)
        if idx is None:
            idx = self.word_id[word] = len(self.vocabulary)
            self.vocabulary.append(word)
        return idx

    def is_interminal(self, name: str) -> bool:
        return self.interminal[self.symbol_id[name]]

    @property
    def preterminals(self) -> list[str]:
        return [a for a, i in zip(self.nonterminals, self.interminal) if not i]

    @property
    def interminals(self) -> list[str]:
        return [a for a, i in zip(self.nonterminals, self.interminal) if i]

    @classmethod
    def from_trees(cls, trees) -> "SymbolTable":
        """Ids in first-seen preorder."""
        table = cls()
        for t in trees:
            for node in t.subtrees():
                table.add_symbol(node.label, node.word is None)
                if node.word is not None:
                    table.add_word(node.word)
        return table


@dataclass(frozen=True, eq=False)
class LatentGrammar:
    """L-PCFG parameters keyed by symbol names.

    ``binary[(a, h1, b, h2, c, h3)]``, ``lexical[(a, h, word)]`` and
    ``root[(a, h)]`` hold probabilities; absent keys mean zero.
    """
    symbols: SymbolTable
    m: dict[str, int]
    root: dict[tuple, float]
    binary: dict[tuple, float]
    lexical: dict[tuple, float]
    meta: dict[str, str] = field(default_factory=dict)

    def states(self, a: str) -> int:
        return self.m[a]

    @property
    def num_parameters(self) -> int:
        return len(self.root) + len(self.binary) + len(self.lexical)

    @cached_property
    def compiled(self):
        from .parser import CompiledGrammar
        return CompiledGrammar(self)

    def __eq__(self, other):
        if not isinstance(other, LatentGrammar):
            return NotImplemented
        return (self.symbols.nonterminals == other.symbols.nonterminals
                and self.symbols.interminal == other.symbols.interminal
                and self.symbols.vocabulary == other.symbols.vocabulary
                and self.m == other.m and self.root == other.root
                and self.binary == other.binary and self.lexical == other.lexical)

    __hash__ = object.__hash__


def validate(grammar: LatentGrammar, tol: float = 1e-9) -> list[str]:
    """Describe every violated normalization/range constraint; [] if none."""
    out = []
    syms = grammar.symbols
    for a in syms.nonterminals:
        if grammar.m.get(a, 0) < 1:
            out.append(f"symbol {a} has no latent states")
    mass: dict[tuple, float] = defaultdict(float)
    for table, kind in ((grammar.binary, "binary"), (grammar.lexical, "lexical"), (grammar.root, "root")):
        for key, p in table.items():
            if not (0.0 <= p <= 1.0) or math.isnan(p):
                out.append(f"{kind} parameter {key} = {p} outside [0, 1]")
            a, h = key[0], key[1]
            if a not in syms.symbol_id:
                out.append(f"{kind} parameter {key} uses unknown symbol {a}")
                continue
            if not 0 <= h < grammar.m.get(a, 0):
                out.append(f"{kind} parameter {key} uses state {h} beyond m_{a}")
            if kind == "binary":
                if not syms.is_interminal(a):
                    out.append(f"binary rule {key} rewrites preterminal {a}")
                for b, hb in ((key[2], key[3]), (key[4], key[5])):
                    if b not in syms.symbol_id or not 0 <= hb < grammar.m.get(b, 0):
                        out.append(f"binary rule {key} has bad child {b}[{hb}]")
                mass[(a, h)] += p
            elif kind == "lexical":
                if syms.is_interminal(a):
                    out.append(f"lexical rule {key} rewrites interminal {a}")
                mass[(a, h)] += p
    for a in syms.nonterminals:
        for h in range(grammar.m.get(a, 0)):
            total = mass.get((a, h), 0.0)
            if abs(total - 1.0) > tol:
                out.append(f"({a},{h}) has conditional mass {total!r}")
    root_mass = sum(grammar.root.values())
    if abs(root_mass - 1.0) > tol:
        out.append(f"root distribution has mass {root_mass!r}")
    return out


@dataclass(frozen=True)
class AnnotatedTree:
    """A skeletal tree plus one latent state per node, in preorder."""
    tree: Tree
    states: tuple[int, ...]

    def __str__(self) -> str:
        it = iter(self.states)

        def render(node: Tree) -> str:
            lab = f"{node.label}#{next(it)}"
            if node.word is not None:
                return f"({lab} {node.word})"
            return "(%s %s)" % (lab, " ".join(render(c) for c in node.children))

        return render(self.tree)


def tree_log_prob(grammar: LatentGrammar, tree: AnnotatedTree) -> float:
    tab = NodeTable.build(tree.tree)
    st = tree.states
    if len(st) != len(tab):
        raise ValueError("state count does not match node count")

    def get(table, key, what):
        try:
            p = table[key]
        except KeyError:
            raise MissingRuleError(f"missing {what} {key}") from None
        if p <= 0.0:
            raise MissingRuleError(f"zero-probability {what} {key}")
        return math.log(p)

    total = get(grammar.root, (tab.labels[0], st[0]), "root")
    for n in range(len(tab)):
        a = tab.labels[n]
        if tab.words[n] is not None:
            total += get(grammar.lexical, (a, st[n], tab.words[n]), "lexical rule")
        else:
            if len(tab.kids[n]) != 2:
                raise ValueError("tree is not binarized")
            l, r = tab.kids[n]
            key = (a, st[n], tab.labels[l], st[l], tab.labels[r], st[r])
            total += get(grammar.binary, key, "binary rule")
    return total


# --------------------------------------------------------------------------
# serialization

def dumps(grammar: LatentGrammar) -> str:
    syms = grammar.symbols
    lines = ["lpcfg-grammar 1"]
    for k in sorted(grammar.meta):
        lines.append(f"meta {k} {grammar.meta[k]}")
    for a, inter in zip(syms.nonterminals, syms.interminal):
        lines.append(f"symbol {a} {'I' if inter else 'P'} {grammar.m[a]}")
    lines.extend(f"word {w}" for w in syms.vocabulary)
    sid, wid = syms.symbol_id, syms.word_id
    for (a, h), p in sorted(grammar.root.items(), key=lambda kv: (sid[kv[0][0]], kv[0][1])):
        lines.append(f"root {a} {h} {p!r}")
    for key, p in sorted(grammar.binary.items(),
                         key=lambda kv: (sid[kv[0][0]], kv[0][1], sid[kv[0][2]], kv[0][3],
                                         sid[kv[0][4]], kv[0][5])):
        lines.append("binary %s %d %s %d %s %d %r" % (*key, p))
    for (a, h, w), p in sorted(grammar.lexical.items(),
                               key=lambda kv: (sid[kv[0][0]], kv[0][1], wid.get(kv[0][2], -1), kv[0][2])):
        lines.append(f"lex {a} {h} {w} {p!r}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> LatentGrammar:
    lines = text.splitlines()
    if not lines or lines[0].split() != ["lpcfg-grammar", "1"]:
        raise ValueError("not an lpcfg grammar file")
    syms = SymbolTable()
    m: dict[str, int] = {}
    meta: dict[str, str] = {}
    root, binary, lexical = {}, {}, {}
    for lineno, line in enumerate(lines[1:], start=2):
        f = line.split()
        if not f:
            continue
        try:
            kind = f[0]
            if kind == "meta":
                meta[f[1]] = " ".join(f[2:])
            elif kind == "symbol":
                syms.add_symbol(f[1], f[2] == "I")
                m[f[1]] = int(f[3])
            elif kind == "word":
                syms.add_word(f[1])
            elif kind == "root":
                root[(f[1], int(f[2]))] = float(f[3])
            elif kind == "binary":
                binary[(f[1], int(f[2]), f[3], int(f[4]), f[5], int(f[6]))] = float(f[7])
            elif kind == "lex":
                lexical[(f[1], int(f[2]), f[3])] = float(f[4])
            else:
                raise ValueError(f"unknown record {kind!r}")
        except (IndexError, ValueError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return LatentGrammar(syms, m, root, binary, lexical, meta)


def save(grammar: LatentGrammar, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(grammar))


def load(path) -> LatentGrammar:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def word_signature(word: str) -> str:
    """Unknown-word class from capitalization, digits, hyphens and suffix."""
    sig = "UNK"
    if word[:1].isupper():
        sig += "-C"
    elif any(ch.isupper() for ch in word):
        sig += "-c"
    if any(ch.isdigit() for ch in word):
        sig += "-d"
    if "-" in word:
        sig += "-h"
    lower = word.lower()
    for suffix in ("ing", "ed", "ly", "ion", "er", "est", "al", "s"):
        if lower.endswith(suffix) and len(lower) > len(suffix) + 1:
            sig += "-" + suffix
            break
    return sig
