"""Clustering estimation of L-PCFGs.

Per nonterminal: build the inside/outside cross-covariance matrix, take its
rank-k SVD, project every instance onto both singular subspaces, cluster the
concatenated projections with k-means, and read latent states off the
clusters. Rule probabilities are relative frequencies in the annotated
treebank.
"""
from __future__ import annotations

import hashlib
import logging
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .features import Block, FeatureIndex, HeadFinder, extract_blocks, variance_normalize
from .grammar import AnnotatedTree, LatentGrammar, SymbolTable, word_signature
from .noise import NoiseSpec, dropout_matrix, gaussian_perturb
from .numeric import kmeans, truncated_svd
from .trees import NodeTable, Tree

log = logging.getLogger(__name__)

THREADS_ENV = "LPCFG_THREADS"


def num_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary parts (independent of PYTHONHASHSEED)."""
    digest = hashlib.sha256("\x1f".join(map(str, parts)).encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass
class ClusteringConfig:
    k: int = 100
    m: int = 24
    restarts: int = 10
    seed: int = 0
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    scale_by_singular_values: bool = False
    dropout_before_normalization: bool = True
    unk_threshold: int = 0
    head_rules: dict | None = None

    def __post_init__(self):
        if self.k < 1 or self.m < 1:
            raise ValueError("k and m must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


# --------------------------------------------------------------------------
# cross-covariance

@dataclass
class CovarianceAccumulator:
    """Per-nonterminal sums of inside/outside outer products.

    ``sums[a]`` is over block-local feature columns; ``omega(a)`` divides
    by the instance count once.
    """
    sums: dict[str, sp.csr_matrix] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)

    def add_block(self, blk: Block) -> None:
        prod = (blk.inside.T @ blk.outside).tocsr()
        if blk.symbol in self.sums:
            self.sums[blk.symbol] = self.sums[blk.symbol] + prod
            self.counts[blk.symbol] += blk.size
        else:
            self.sums[blk.symbol] = prod
            self.counts[blk.symbol] = blk.size

    def omega(self, a: str) -> sp.csr_matrix:
        mat = self.sums[a].astype(np.float64) / self.counts[a]
        mat.sum_duplicates()
        return mat.tocsr()

    def __contains__(self, a: str) -> bool:
        return a in self.sums


def build_omega(blocks: dict[str, Block]) -> CovarianceAccumulator:
    acc = CovarianceAccumulator()
    for blk in blocks.values():
        if blk.size:
            acc.add_block(blk)
    return acc


# --------------------------------------------------------------------------
# training data

@dataclass
class TrainingData:
    """Binarized treebank with features extracted once, reusable across models."""
    trees: list[Tree]
    tables: list[NodeTable]
    symbols: SymbolTable
    blocks: dict[str, Block]
    inside_index: FeatureIndex
    outside_index: FeatureIndex

    @classmethod
    def build(cls, treebank: list[Tree], head_rules: dict | None = None) -> "TrainingData":
        if not treebank:
            raise ValueError("empty treebank")
        tables = [NodeTable.build(t) for t in treebank]
        symbols = SymbolTable.from_trees(treebank)
        inside, outside = FeatureIndex(), FeatureIndex()
        blocks = extract_blocks(tables, inside, outside, HeadFinder(head_rules),
                                symbols=symbols.nonterminals)
        inside.freeze()
        outside.freeze()
        return cls(list(treebank), tables, symbols, blocks, inside, outside)


@dataclass
class ProjectedBlock:
    symbol: str
    x: np.ndarray  # (instances, 2k): inside projection then outside projection
    k: int

    @property
    def y(self) -> np.ndarray:
        return self.x[:, :self.k]

    @property
    def z(self) -> np.ndarray:
        return self.x[:, self.k:]


def project_block(blk: Block, omega: sp.csr_matrix, k: int, seed: int,
                  scale_by_singular_values: bool = False) -> ProjectedBlock:
    k_eff = min(k, omega.shape[0], omega.shape[1])
    if k_eff < 1:
        return ProjectedBlock(blk.symbol, np.zeros((blk.size, 0)), 0)
    pair = truncated_svd(omega, k_eff, seed=seed)
    U, V = pair.U, pair.V
    if scale_by_singular_values:
        U, V = U * pair.s, V * pair.s
    y = np.asarray(blk.inside @ U)
    z = np.asarray(blk.outside @ V)
    return ProjectedBlock(blk.symbol, np.hstack([y, z]), k_eff)


# --------------------------------------------------------------------------
# training

@dataclass
class ClusteringOutput:
    grammar: LatentGrammar
    annotated: list[AnnotatedTree]
    objectives: dict[str, float]


def _cluster_symbol(blk: Block, config: ClusteringConfig) -> tuple[np.ndarray, float]:
    spec = config.noise
    seed_for = lambda stage: derive_seed(config.seed, stage, blk.symbol)  # noqa: E731
    inside, outside = blk.inside, blk.outside
    if spec.scheme == "dropout" and spec.sigma > 0:
        rng = np.random.default_rng(seed_for("dropout"))
        inside = dropout_matrix(inside, spec.sigma, rng)
        outside = dropout_matrix(outside, spec.sigma, rng)
    work = blk.with_matrices(inside, outside)
    if config.dropout_before_normalization or spec.scheme != "dropout":
        work = variance_normalize({blk.symbol: work})[blk.symbol]
    omega = build_omega({blk.symbol: work}).omega(blk.symbol)
    proj = project_block(work, omega, config.k, seed_for("svd"), config.scale_by_singular_values)
    x = proj.x
    if spec.scheme in ("gaussian_additive", "gaussian_multiplicative") and spec.sigma > 0:
        rng = np.random.default_rng(seed_for("gaussian"))
        mode = "additive" if spec.scheme == "gaussian_additive" else "multiplicative"
        x = gaussian_perturb(x, spec.sigma, mode, rng)
    result = kmeans(x, config.m, restarts=config.restarts, seed=seed_for("kmeans"))
    _, states = np.unique(result.assignment, return_inverse=True)
    return states.astype(np.int64), result.objective


def normalize_blocks_for(data: TrainingData, config: ClusteringConfig) -> dict[str, Block]:
    """Blocks with the pre-SVD pipeline applied (used when dropout comes after
    normalization)."""
    if config.noise.scheme == "dropout" and not config.dropout_before_normalization:
        return variance_normalize(data.blocks)
    return data.blocks


def cluster_treebank(data: TrainingData | list[Tree], config: ClusteringConfig) -> ClusteringOutput:
    """Run the full clustering pipeline and return grammar plus annotations."""
    if not isinstance(data, TrainingData):
        data = TrainingData.build(data, config.head_rules)
    states = [np.zeros(len(t), dtype=np.int64) for t in data.tables]
    objectives: dict[str, float] = {}
    if config.m > 1:
        blocks = normalize_blocks_for(data, config)
        todo = [blocks[a] for a in data.symbols.nonterminals if a in blocks]
        with ThreadPoolExecutor(num_threads()) as pool:
            results = list(pool.map(lambda b: _cluster_symbol(b, config), todo))
        for blk, (labels, obj) in zip(todo, results):
            objectives[blk.symbol] = obj
            for (ti, n), h in zip(blk.nodes, labels.tolist()):
                states[ti][n] = h
    annotated = [AnnotatedTree(t, tuple(s.tolist())) for t, s in zip(data.trees, states)]
    meta = {"seed": str(config.seed), "k": str(config.k), "m": str(config.m),
            "restarts": str(config.restarts), "noise": config.noise.tag(),
            "unk_threshold": str(config.unk_threshold)}
    grammar = estimate_from_annotated(annotated, config.unk_threshold, meta, data.symbols)
    return ClusteringOutput(grammar, annotated, objectives)


def train_clustering(treebank, config: ClusteringConfig | None = None) -> LatentGrammar:
    return cluster_treebank(treebank, config or ClusteringConfig()).grammar


def train_base_pcfg(treebank, unk_threshold: int = 0) -> LatentGrammar:
    """Relative-frequency PCFG without latent states."""
    if not treebank:
        raise ValueError("empty treebank")
    annotated = [AnnotatedTree(t, (0,) * len(t)) for t in treebank]
    return estimate_from_annotated(annotated, unk_threshold,
                                   {"m": "1", "unk_threshold": str(unk_threshold)})


# --------------------------------------------------------------------------
# counting

@dataclass
class RuleCounts:
    root: Counter = field(default_factory=Counter)
    binary: Counter = field(default_factory=Counter)
    lexical: Counter = field(default_factory=Counter)

    def parent_totals(self) -> Counter:
        tot: Counter = Counter()
        for key, c in self.binary.items():
            tot[key[:2]] += c
        for key, c in self.lexical.items():
            tot[key[:2]] += c
        return tot


def count_rules(annotated: list[AnnotatedTree], unk_threshold: int = 0) -> RuleCounts:
    counts = RuleCounts()
    rare: set[str] = set()
    if unk_threshold > 0:
        freq = Counter(w for at in annotated for w in at.tree.words())
        rare = {w for w, c in freq.items() if c < unk_threshold}
    for at in annotated:
        tab = NodeTable.build(at.tree)
        st = at.states
        counts.root[(tab.labels[0], st[0])] += 1
        for n in range(len(tab)):
            a = tab.labels[n]
            w = tab.words[n]
            if w is not None:
                counts.lexical[(a, st[n], w)] += 1
                if w in rare:
                    counts.lexical[(a, st[n], word_signature(w))] += 1
            else:
                l, r = tab.kids[n]
                counts.binary[(a, st[n], tab.labels[l], st[l], tab.labels[r], st[r])] += 1
    return counts


def estimate_from_annotated(annotated: list[AnnotatedTree], unk_threshold: int = 0,
                            meta: dict | None = None,
                            symbols: SymbolTable | None = None) -> LatentGrammar:
    """Relative-frequency estimate from a latent-annotated treebank.

    Counts are integers; each probability is one division.
    """
    if not annotated:
        raise ValueError("empty treebank")
    if symbols is None:
        symbols = SymbolTable.from_trees([at.tree for at in annotated])
    syms = SymbolTable(list(symbols.nonterminals), list(symbols.interminal), list(symbols.vocabulary))
    counts = count_rules(annotated, unk_threshold)
    m: dict[str, int] = {a: 1 for a in syms.nonterminals}
    for key in list(counts.binary) + list(counts.lexical) + list(counts.root):
        m[key[0]] = max(m[key[0]], key[1] + 1)
    totals = counts.parent_totals()
    n_trees = sum(counts.root.values())
    for (_, _, w) in counts.lexical:
        syms.add_word(w)
    root = {k: c / n_trees for k, c in counts.root.items()}
    binary = {k: c / totals[k[:2]] for k, c in counts.binary.items()}
    lexical = {k: c / totals[k[:2]] for k, c in counts.lexical.items()}
    return LatentGrammar(syms, m, root, binary, lexical, dict(meta or {}))


def with_seed(config: ClusteringConfig, seed: int, noise: NoiseSpec | None = None) -> ClusteringConfig:
    return replace(config, seed=seed, noise=noise if noise is not None else config.noise)
