"""Inside/outside indicator features over binarized trees.

Feature names are canonical strings: a template tag, then ``|``-joined
labels. Every name carries the node's own label, so each feature lives in
exactly one nonterminal block and its variance is a per-block quantity.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .trees import JOIN, NodeTable, base_label

MAX_WIDTH = 20
ROOT_CONTEXT = "ROOT"
SAME_HEAD = "SAME-HEAD"


@dataclass
class FeatureIndex:
    names: list[str] = field(default_factory=list)
    ids: dict[str, int] = field(default_factory=dict)
    frozen: bool = False
    variance: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.names)

    def lookup(self, name: str) -> int | None:
        idx = self.ids.get(name)
        if idx is None and not self.frozen:
            idx = self.ids[name] = len(self.names)
            self.names.append(name)
            self.variance.append(float("nan"))
        return idx

    def freeze(self) -> "FeatureIndex":
        self.frozen = True
        return self

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, name in enumerate(self.names):
                fh.write(f"{i}\t{name}\t{self.variance[i]!r}\n")

    @classmethod
    def load(cls, path) -> "FeatureIndex":
        index = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                i, name, var = line.rstrip("\n").split("\t")
                if int(i) != len(index.names):
                    raise ValueError(f"non-contiguous feature id {i}")
                index.ids[name] = len(index.names)
                index.names.append(name)
                index.variance.append(float(var))
        return index.freeze()


@dataclass(frozen=True)
class SparseFeatureVector:
    ids: tuple[int, ...]
    values: tuple[float, ...]

    @classmethod
    def indicators(cls, ids) -> "SparseFeatureVector":
        uniq = tuple(sorted(set(ids)))
        return cls(uniq, (1.0,) * len(uniq))

    def __len__(self) -> int:
        return len(self.ids)


# --------------------------------------------------------------------------
# heads

class HeadFinder:
    """Head-child selection.

    ``table`` maps a parent label to ``(direction, prefixes)``: scan children
    from the left or right and take the first whose label starts with one of
    the prefixes, in priority order. Parents not in the table use the default:
    the leftmost child sharing the parent's first letter, else the rightmost.
    """

    def __init__(self, table: dict[str, tuple[str, list[str]]] | None = None):
        self.table = table or {}

    @staticmethod
    def _top(label: str) -> str:
        return base_label(label).split(JOIN)[0]

    @staticmethod
    def _bottom(label: str) -> str:
        return base_label(label).split(JOIN)[-1]

    def head_child(self, parent: str, children: list[str]) -> int:
        kids = [self._top(c) for c in children]
        rule = self.table.get(self._bottom(parent))
        if rule is not None:
            direction, prefixes = rule
            order = range(len(kids)) if direction == "left" else range(len(kids) - 1, -1, -1)
            for pre in prefixes:
                for i in order:
                    if kids[i].startswith(pre):
                        return i
            return order[0]
        cat = self._bottom(parent)[:1]
        for i, k in enumerate(kids):
            if k[:1] == cat:
                return i
        return len(kids) - 1

    def heads(self, table: NodeTable) -> list[int]:
        """Head token position of every node."""
        out = [0] * len(table)
        for n in range(len(table) - 1, -1, -1):
            if table.words[n] is not None:
                out[n] = table.spans[n][0]
            else:
                kids = table.kids[n]
                h = self.head_child(table.labels[n], [table.labels[k] for k in kids])
                out[n] = out[kids[h]]
        return out


# --------------------------------------------------------------------------
# templates

def _rule(table: NodeTable, n: int, foot: int | None = None, expand: dict | None = None) -> str:
    """Bracketed one-level rule at ``n``; children in ``expand`` are rendered
    as nested fragments, the foot is starred."""
    if table.words[n] is not None:
        return f"({table.labels[n]} {table.words[n]})"
    parts = []
    for k in table.kids[n]:
        if expand and k in expand:
            parts.append(expand[k])
        elif k == foot:
            parts.append(table.labels[k] + "*")
        else:
            parts.append(table.labels[k])
    return "(%s %s)" % (table.labels[n], " ".join(parts))


def inside_names(table: NodeTable, n: int, heads: list[int]) -> list[str]:
    a = table.labels[n]
    if table.words[n] is not None:
        return [f"I:lex|{a}|{table.words[n]}"]
    b, c = table.kids[n]
    lb, lc = table.labels[b], table.labels[c]
    i, j = table.spans[n]
    rule = _rule(table, n)
    return [
        f"I:left|{a}|{lb}",
        f"I:right|{a}|{lc}",
        f"I:rule|{rule}",
        f"I:rule+left|{_rule(table, n, expand={b: _rule(table, b)})}",
        f"I:rule+right|{_rule(table, n, expand={c: _rule(table, c)})}",
        f"I:head|{a}|{table.labels[_preterminal_at(table, heads[n])]}",
        f"I:width|{a}|{j - i}",
    ]


def _preterminal_at(table: NodeTable, pos: int) -> int:
    n = 0
    while table.words[n] is None:
        for k in table.kids[n]:
            i, j = table.spans[k]
            if i <= pos < j:
                n = k
                break
    return n


def outside_names(table: NodeTable, n: int, heads: list[int]) -> list[str]:
    foot = table.labels[n]
    if n == 0:
        return [f"O:{ROOT_CONTEXT}|{foot}"]
    par = table.parent[n]
    out = [f"O:rule|{_rule(table, par, foot=n)}",
           f"O:parent|{foot}|{table.labels[par]}"]
    frag = _rule(table, par, foot=n)
    child, anc = par, table.parent[par]
    for level in (2, 3):
        if anc < 0:
            break
        frag = _rule(table, anc, expand={child: frag})
        out.append(f"O:frag{level}|{frag}")
        if level == 2:
            out.append(f"O:grandparent|{foot}|{table.labels[par]}|{table.labels[anc]}")
        child, anc = anc, table.parent[anc]
    h = heads[n]
    up = par
    while up >= 0 and heads[up] == h:
        up = table.parent[up]
    if up >= 0:
        out.append(f"O:headpos|{foot}|{table.labels[_preterminal_at(table, heads[up])]}")
    else:
        out.append(f"O:headpos|{foot}|{SAME_HEAD}")
    i, j = table.spans[n]
    out.append(f"O:lwidth|{foot}|{min(i, MAX_WIDTH)}")
    out.append(f"O:rwidth|{foot}|{min(table.length - j, MAX_WIDTH)}")
    return out


def _vector(names, index: FeatureIndex) -> SparseFeatureVector:
    ids = [i for i in (index.lookup(s) for s in names) if i is not None]
    return SparseFeatureVector.indicators(ids)


def inside_features(table: NodeTable, n: int, index: FeatureIndex,
                    heads: list[int] | None = None) -> SparseFeatureVector:
    if heads is None:
        heads = HeadFinder().heads(table)
    return _vector(inside_names(table, n, heads), index)


def outside_features(table: NodeTable, n: int, index: FeatureIndex,
                     heads: list[int] | None = None) -> SparseFeatureVector:
    if heads is None:
        heads = HeadFinder().heads(table)
    return _vector(outside_names(table, n, heads), index)


# --------------------------------------------------------------------------
# per-nonterminal blocks

@dataclass
class Block:
    """All training instances of one nonterminal.

    ``inside``/``outside`` are CSR matrices (instances x block-local
    features); ``inside_ids``/``outside_ids`` map local columns to ids in
    the global indices.
    """
    symbol: str
    nodes: list[tuple[int, int]]
    is_root: np.ndarray
    inside: sp.csr_matrix
    outside: sp.csr_matrix
    inside_ids: np.ndarray
    outside_ids: np.ndarray

    @property
    def size(self) -> int:
        return len(self.nodes)

    def with_matrices(self, inside, outside) -> "Block":
        return Block(self.symbol, self.nodes, self.is_root, inside, outside,
                     self.inside_ids, self.outside_ids)


def _local_csr(rows: list[list[int]]) -> tuple[sp.csr_matrix, np.ndarray]:
    cols = np.array(sorted({c for r in rows for c in r}), dtype=np.int64)
    local = {c: i for i, c in enumerate(cols.tolist())}
    indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    indices = []
    for i, r in enumerate(rows):
        ids = sorted(local[c] for c in r)
        indices.extend(ids)
        indptr[i + 1] = indptr[i] + len(ids)
    data = np.ones(len(indices))
    mat = sp.csr_matrix((data, np.array(indices, dtype=np.int64), indptr),
                        shape=(len(rows), len(cols)))
    return mat, cols


def extract_blocks(tables: list[NodeTable], inside_index: FeatureIndex,
                   outside_index: FeatureIndex, head_finder: HeadFinder | None = None,
                   symbols: list[str] | None = None) -> dict[str, Block]:
    """Extract indicator features for every node, grouped by symbol.

    Blocks come back in ``symbols`` order (default: first-seen order).
    """
    head_finder = head_finder or HeadFinder()
    groups: dict[str, list] = {}
    for ti, tab in enumerate(tables):
        heads = head_finder.heads(tab)
        for n in range(len(tab)):
            ins = _vector(inside_names(tab, n, heads), inside_index).ids
            out = _vector(outside_names(tab, n, heads), outside_index).ids
            groups.setdefault(tab.labels[n], []).append(((ti, n), n == 0, ins, out))
    order = symbols if symbols is not None else list(groups)
    blocks = {}
    for a in order:
        if a not in groups:
            continue
        g = groups[a]
        ins, in_ids = _local_csr([x[2] for x in g])
        outs, out_ids = _local_csr([x[3] for x in g])
        blocks[a] = Block(a, [x[0] for x in g], np.array([x[1] for x in g], dtype=bool),
                          ins, outs, in_ids, out_ids)
    return blocks


def column_std(mat: sp.csr_matrix) -> np.ndarray:
    """Population standard deviation of each column (zeros included)."""
    n = mat.shape[0]
    if n == 0:
        return np.zeros(mat.shape[1])
    mean = np.asarray(mat.sum(axis=0)).ravel() / n
    sq = np.asarray(mat.multiply(mat).sum(axis=0)).ravel() / n
    return np.sqrt(np.maximum(sq - mean * mean, 0.0))


def scale_columns(mat: sp.csr_matrix, std: np.ndarray) -> sp.csr_matrix:
    scale = np.where(std > 0, 1.0 / np.where(std > 0, std, 1.0), 1.0)
    out = mat.tocsr(copy=True)
    out.data = out.data * scale[out.indices]
    return out


def variance_normalize(blocks: dict[str, Block], inside_index: FeatureIndex | None = None,
                       outside_index: FeatureIndex | None = None) -> dict[str, Block]:
    """Divide every feature by its within-block population standard deviation.

    Zero-variance features are left unscaled. Variances are recorded in the
    indices when given.
    """
    out = {}
    for a, blk in blocks.items():
        s_in, s_out = column_std(blk.inside), column_std(blk.outside)
        for index, ids, std in ((inside_index, blk.inside_ids, s_in),
                                (outside_index, blk.outside_ids, s_out)):
            if index is not None:
                for i, s in zip(ids.tolist(), std.tolist()):
                    index.variance[i] = s * s
        out[a] = blk.with_matrices(scale_columns(blk.inside, s_in), scale_columns(blk.outside, s_out))
    return out
