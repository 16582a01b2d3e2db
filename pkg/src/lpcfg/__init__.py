"""Latent-variable PCFGs estimated by SVD + k-means clustering, noise-perturbed
ensembles, and multi-model decoding."""
from .grammar import LatentGrammar, SymbolTable, AnnotatedTree, validate, tree_log_prob
from .trees import Tree, binarize, debinarize, parse_bracketed, read_treebank, tree_spans
from .estimation import ClusteringConfig, TrainingData, train_clustering, train_base_pcfg
from .noise import NoiseSpec, train_ensemble
from .parser import inside_outside, mbr_decode, parse, prune_mask
from .ensemble import CandidateSet, max_tree_coverage, max_marginal_coverage, Plan
from .evaluate import parseval, oracle_f1
from .synth import SynthSpec, planted_grammar, random_grammar, sample_treebank

__version__ = "0.1.0"

__all__ = [
    "LatentGrammar", "SymbolTable", "AnnotatedTree", "validate", "tree_log_prob",
    "Tree", "binarize", "debinarize", "parse_bracketed", "read_treebank", "tree_spans",
    "ClusteringConfig", "TrainingData", "train_clustering", "train_base_pcfg",
    "NoiseSpec", "train_ensemble",
    "inside_outside", "mbr_decode", "parse", "prune_mask",
    "CandidateSet", "max_tree_coverage", "max_marginal_coverage", "Plan",
    "parseval", "oracle_f1",
    "SynthSpec", "planted_grammar", "random_grammar", "sample_treebank",
]
