"""Noise-perturbed ensembles on random synthetic grammars.

For each seed: train an unperturbed model plus ``replicates`` models per
noise scheme, decode a held-out set with each, then report single-model F1,
oracle F1 (pooled and per scheme) and the F1 of maximal tree coverage and
maximal marginal coverage over the pool.

    python scripts/ensemble_experiment.py --seeds 5 --sigma 0.1 --replicates 4
"""
import argparse
import time

import numpy as np

from lpcfg.ensemble import CandidateSet, max_marginal_coverage, max_tree_coverage
from lpcfg.estimation import ClusteringConfig, TrainingData, train_base_pcfg, train_clustering
from lpcfg.evaluate import oracle_f1, parseval
from lpcfg.noise import NoiseSpec, train_ensemble
from lpcfg.parser import UnparseableError, fallback_tree, parse
from lpcfg.synth import SynthSpec, random_grammar, sample_treebank
from lpcfg.trees import binarize, debinarize

SCHEMES = ("gaussian_additive", "gaussian_multiplicative", "dropout")


def run(seed, args):
    g = random_grammar(SynthSpec(interminals=args.interminals, preterminals=args.preterminals,
                                 m=2, vocab=args.vocab, seed=seed))
    train = [a.tree for a in sample_treebank(g, args.train, seed, max_len=args.max_len)]
    test = [a.tree for a in sample_treebank(g, args.test, 1000 + seed, max_len=args.max_len)]
    gold = [debinarize(t) for t in test]
    data = TrainingData.build(train)
    base = train_base_pcfg(train)
    cfg = ClusteringConfig(k=100, m=args.m, restarts=10, seed=seed)

    def decode(grammar):
        trees, tables = [], []
        for t in test:
            try:
                tree, chart = parse(grammar, base, t.leaves())
                trees.append(tree)
                tables.append(chart.span_table())
            except UnparseableError:
                trees.append(fallback_tree(t.leaves()))
                tables.append({})
        return trees, tables

    plain, _ = decode(train_clustering(data, cfg))
    members = train_ensemble(data, cfg, [NoiseSpec(s, args.sigma) for s in SCHEMES],
                             args.replicates)
    decoded = [decode(m.grammar) for m in members]
    trees = [d[0] for d in decoded]
    singles = [parseval(gold, t).f1 for t in trees]
    r = args.replicates
    per_scheme = [oracle_f1(gold, [list(c) for c in zip(*trees[i * r:(i + 1) * r])])[0].f1
                  for i in range(len(SCHEMES))]
    maxtre, maxmrg = [], []
    for i in range(len(test)):
        cands = [binarize(t[i]) for t in trees]
        maxtre.append(debinarize(max_tree_coverage(CandidateSet(cands))))
        tables = [d[1][i] for d in decoded]
        maxmrg.append(debinarize(max_marginal_coverage(CandidateSet(cands, marginals=tables))))
    return {
        "unperturbed": parseval(gold, plain).f1,
        "mean single": float(np.mean(singles)),
        "best single": max(singles),
        "oracle": oracle_f1(gold, [list(c) for c in zip(*trees)])[0].f1,
        **{f"oracle {s}": f for s, f in zip(SCHEMES, per_scheme)},
        "maxtre": parseval(gold, maxtre).f1,
        "maxmrg": parseval(gold, maxmrg).f1,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--sigma", type=float, default=0.1)
    ap.add_argument("--replicates", type=int, default=4)
    ap.add_argument("--m", type=int, default=2)
    ap.add_argument("--interminals", type=int, default=3)
    ap.add_argument("--preterminals", type=int, default=3)
    ap.add_argument("--vocab", type=int, default=8)
    ap.add_argument("--train", type=int, default=2000)
    ap.add_argument("--test", type=int, default=200)
    ap.add_argument("--max-len", type=int, default=12)
    args = ap.parse_args()
    for seed in range(args.seeds):
        start = time.perf_counter()
        res = run(seed, args)
        print(f"seed {seed} ({time.perf_counter() - start:.0f}s)")
        for k, v in res.items():
            print(f"  {k:32s} {v:6.2f}")


if __name__ == "__main__":
    main()
