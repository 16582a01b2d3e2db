"""Bracketed trees: reading, writing, binarization and inside/outside decomposition.

A single immutable :class:`Tree` type serves for raw n-ary trees, binarized
(skeletal) trees and decoder output. Preterminals carry a ``word`` and no
children; every other node carries one or more children.
"""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator

MARK = "@"
JOIN = "+"


class TreeFormatError(ValueError):
    """Raised for malformed bracketing or binarization markers."""


@dataclass(frozen=True)
class Tree:
    label: str
    children: tuple["Tree", ...] = ()
    word: str | None = None

    def __post_init__(self):
        if not self.label:
            raise TreeFormatError("empty label")
        if self.word is None and not self.children:
            raise TreeFormatError(f"empty constituent {self.label!r}")
        if self.word is not None and self.children:
            raise TreeFormatError("preterminal with children")

    @property
    def is_preterminal(self) -> bool:
        return self.word is not None

    def __str__(self) -> str:
        if self.word is not None:
            return f"({self.label} {self.word})"
        return "(%s %s)" % (self.label, " ".join(str(c) for c in self.children))

    def leaves(self) -> list[tuple[str, str]]:
        """(word, tag) pairs in sentence order."""
        out: list[tuple[str, str]] = []
        stack = [self]
        while stack:
            node = stack.pop()
            if node.word is not None:
                out.append((node.word, node.label))
            else:
                stack.extend(reversed(node.children))
        return out

    def words(self) -> list[str]:
        return [w for w, _ in self.leaves()]

    def subtrees(self) -> Iterator["Tree"]:
        """Nodes in preorder."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def __len__(self) -> int:
        return sum(1 for _ in self.subtrees())


# --------------------------------------------------------------------------
# reading and writing

_TOKEN = re.compile(r"\(|\)|[^\s()]+")


def _tokens(text: str):
    line, line_start = 1, 0
    for match in _TOKEN.finditer(text):
        start = match.start()
        while True:
            nl = text.find("\n", line_start, start)
            if nl < 0:
                break
            line += 1
            line_start = nl + 1
        yield match.group(), line, start - line_start + 1


def parse_bracketed(text: str) -> list[Tree]:
    """Parse whitespace-tolerant s-expression bracketing into trees.

    One tree per top-level bracket. A top-level bracket with no label and a
    single child (the PTB ``( (S ...) )`` wrapper) is unwrapped.

    >>> [str(t) for t in parse_bracketed("(S (A a) (B b)) (A c)")]
    ['(S (A a) (B b))', '(A c)']
    """
    trees = []
    # stack entries: [label, children, word tokens, line, col]
    stack: list[list] = []
    last = (1, 1)
    for tok, line, col in _tokens(text):
        last = (line, col)
        if tok == "(":
            stack.append([None, [], [], line, col])
        elif tok == ")":
            if not stack:
                raise TreeFormatError(f"unbalanced ')' at line {line}, column {col}")
            label, kids, words, l0, c0 = stack.pop()
            node = _make_node(label, kids, words, l0, c0)
            if stack:
                stack[-1][1].append(node)
            else:
                trees.append(node)
        else:
            if not stack:
                raise TreeFormatError(f"token {tok!r} outside brackets at line {line}, column {col}")
            top = stack[-1]
            if top[0] is None and not top[1] and not top[2]:
                top[0] = tok
            else:
                top[2].append(tok)
    if stack:
        _, _, _, l0, c0 = stack[-1]
        raise TreeFormatError(
            f"unbalanced '(' opened at line {l0}, column {c0} (input ends at line {last[0]})")
    return trees


def _make_node(label, kids, words, line, col) -> Tree:
    where = f"line {line}, column {col}"
    if label is None:
        if len(kids) == 1 and not words:
            return kids[0]
        raise TreeFormatError(f"unlabeled or empty constituent at {where}")
    if words and kids:
        raise TreeFormatError(f"mixed words and constituents under {label!r} at {where}")
    if words:
        if len(words) != 1:
            raise TreeFormatError(f"preterminal {label!r} with {len(words)} words at {where}")
        return Tree(label, word=words[0])
    if not kids:
        raise TreeFormatError(f"empty constituent {label!r} at {where}")
    return Tree(label, tuple(kids))


def read_treebank(path, clean: bool = True) -> list[Tree]:
    with open(path, encoding="utf-8") as fh:
        trees = parse_bracketed(fh.read())
    if clean:
        trees = [t for t in (strip_annotations(t) for t in trees) if t is not None]
    return trees


def write_treebank(path, trees: Iterable[Tree]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in trees:
            fh.write(f"{t}\n")


def _coarse_label(label: str) -> str:
    if label.startswith("-") and label.endswith("-"):
        return label  # -NONE-, -LRB-
    return re.split(r"[-=]", label, maxsplit=1)[0] or label


def strip_annotations(tree: Tree) -> Tree | None:
    """Drop function tags / coindexation and delete ``-NONE-`` subtrees.

    Returns None if nothing is left.
    """
    if tree.word is not None:
        if tree.label == "-NONE-":
            return None
        return Tree(_coarse_label(tree.label), word=tree.word)
    kids = tuple(k for k in (strip_annotations(c) for c in tree.children) if k is not None)
    if not kids:
        return None
    return Tree(_coarse_label(tree.label), kids)


# --------------------------------------------------------------------------
# tagged sentences

def escape_token(tok: str) -> str:
    return tok.replace("\\", "\\\\").replace("_", "\\u")


def unescape_token(tok: str) -> str:
    return re.sub(r"\\(.)", lambda m: "_" if m.group(1) == "u" else m.group(1), tok)


def format_tagged(sentence: list[tuple[str, str]]) -> str:
    return " ".join(f"{escape_token(w)}_{escape_token(t)}" for w, t in sentence)


def parse_tagged(line: str) -> list[tuple[str, str]]:
    """Parse ``word_TAG word_TAG ...``; the last unescaped underscore splits."""
    out = []
    for tok in line.split():
        idx = tok.rfind("_")
        if idx <= 0 or idx == len(tok) - 1:
            raise TreeFormatError(f"token {tok!r} is not word_TAG")
        out.append((unescape_token(tok[:idx]), unescape_token(tok[idx + 1:])))
    return out


# --------------------------------------------------------------------------
# binarization

def is_intermediate(label: str) -> bool:
    return label.startswith(MARK)


def base_label(label: str) -> str:
    """Strip the binarization marker: ``@VP`` -> ``VP``."""
    return label[len(MARK):] if label.startswith(MARK) else label


def binarize(tree: Tree) -> Tree:
    """Right-branching binarization, horizontal Markov order 0.

    Unary chains collapse into ``+``-joined labels; extra children go under
    ``@``-marked intermediates.

    >>> str(binarize(parse_bracketed("(X (A a) (B b) (C c))")[0]))
    '(X (A a) (@X (B b) (C c)))'
    >>> str(binarize(parse_bracketed("(X (A a))")[0]))
    '(X+A a)'
    """
    if tree.label.startswith(MARK) or JOIN in tree.label:
        raise TreeFormatError(f"label {tree.label!r} collides with binarization markers")
    if tree.word is not None:
        return tree
    if len(tree.children) == 1:
        child = binarize(tree.children[0])
        return Tree(tree.label + JOIN + child.label, child.children, child.word)
    kids = [binarize(c) for c in tree.children]
    return _right_branch(tree.label, kids)


def _right_branch(label: str, kids: list[Tree]) -> Tree:
    if len(kids) == 2:
        return Tree(label, tuple(kids))
    return Tree(label, (kids[0], _right_branch(MARK + base_label(label), kids[1:])))


def debinarize(tree: Tree) -> Tree:
    """Inverse of :func:`binarize`.

    Intermediate nodes are spliced into whatever parent holds them; an
    intermediate at the root is renamed to its base label.
    """
    if is_intermediate(tree.label):
        tree = Tree(base_label(tree.label), tree.children, tree.word)
    return _debin(tree)


def _split(label: str) -> list[str]:
    if is_intermediate(label):
        label = base_label(label)
    parts = label.split(JOIN)
    if any(not p or p.startswith(MARK) for p in parts):
        raise TreeFormatError(f"malformed marker in label {label!r}")
    return parts


def _debin(tree: Tree) -> Tree:
    parts = _split(tree.label)
    if tree.word is not None:
        node = Tree(parts[-1], word=tree.word)
    else:
        node = Tree(parts[-1], tuple(_splice(tree.children)))
    for lab in reversed(parts[:-1]):
        node = Tree(lab, (node,))
    return node


def _splice(children) -> Iterator[Tree]:
    for c in children:
        if c.word is None and is_intermediate(c.label):
            _split(c.label)
            yield from _splice(c.children)
        else:
            yield _debin(c)


# --------------------------------------------------------------------------
# spans

def tree_spans(tree: Tree, include_intermediates: bool = True) -> Counter:
    """Multiset of (label, i, j) with half-open token spans, one per node."""
    out: Counter = Counter()

    def walk(node: Tree, i: int) -> int:
        if node.word is not None:
            j = i + 1
        else:
            j = i
            for c in node.children:
                j = walk(c, j)
        if include_intermediates or not is_intermediate(node.label):
            out[(node.label, i, j)] += 1
        return j

    walk(tree, 0)
    return out


# --------------------------------------------------------------------------
# node tables and inside/outside decomposition

@dataclass
class NodeTable:
    """Flat preorder view of a binarized tree.

    ``parent[0] == -1``; ``kids[n]`` is ``()`` for preterminals.
    """
    tree: Tree
    labels: list[str] = field(default_factory=list)
    kids: list[tuple[int, ...]] = field(default_factory=list)
    parent: list[int] = field(default_factory=list)
    spans: list[tuple[int, int]] = field(default_factory=list)
    words: list[str | None] = field(default_factory=list)
    length: int = 0

    @classmethod
    def build(cls, tree: Tree) -> "NodeTable":
        table = cls(tree)

        def walk(node: Tree, par: int, i: int) -> int:
            idx = len(table.labels)
            table.labels.append(node.label)
            table.parent.append(par)
            table.words.append(node.word)
            table.kids.append(())
            table.spans.append((i, i))
            if node.word is not None:
                j = i + 1
            else:
                j, ks = i, []
                for c in node.children:
                    ks.append(len(table.labels))
                    j = walk(c, idx, j)
                table.kids[idx] = tuple(ks)
            table.spans[idx] = (i, j)
            return j

        table.length = walk(tree, -1, 0)
        return table

    def __len__(self) -> int:
        return len(self.labels)

    def tags(self) -> list[str]:
        return [lab for lab, w in zip(self.labels, self.words) if w is not None]

    def subtree(self, n: int) -> str:
        if self.words[n] is not None:
            return f"({self.labels[n]} {self.words[n]})"
        return "(%s %s)" % (self.labels[n], " ".join(self.subtree(k) for k in self.kids[n]))

    def outside(self, n: int) -> str:
        """Bracketed outside tree of node ``n``, its foot marked with ``*``."""
        root = 0
        return self._render_outside(root, n)

    def _render_outside(self, cur: int, foot: int) -> str:
        if cur == foot:
            return self.labels[cur] + "*"
        if not self._dominates(cur, foot):
            return self.subtree(cur)
        return "(%s %s)" % (self.labels[cur],
                            " ".join(self._render_outside(k, foot) for k in self.kids[cur]))

    def _dominates(self, a: int, b: int) -> bool:
        while b >= 0:
            if a == b:
                return True
            b = self.parent[b]
        return False


@dataclass(frozen=True)
class InstanceRecord:
    """One (a, t, o, b) training instance: a node split into inside/outside trees."""
    symbol: str
    tree_index: int
    node_index: int
    is_root: bool


def decompose(treebank) -> list[InstanceRecord]:
    """One record per node per binarized tree; only roots are flagged."""
    tables = [t if isinstance(t, NodeTable) else NodeTable.build(t) for t in treebank]
    return [InstanceRecord(tab.labels[n], ti, n, n == 0)
            for ti, tab in enumerate(tables) for n in range(len(tab))]
