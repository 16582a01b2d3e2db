"""Held-out F1 of the clustering estimator on the planted PP-attachment
grammar, for several state counts m.

    python scripts/planted_recovery.py --seeds 5 --train 5000 --m 1 2 4
"""
import argparse
import time

from lpcfg.estimation import ClusteringConfig, TrainingData, train_base_pcfg, train_clustering
from lpcfg.evaluate import parseval
from lpcfg.parser import parse
from lpcfg.synth import planted_grammar, sample_treebank
from lpcfg.trees import debinarize


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--train", type=int, default=5000)
    ap.add_argument("--test", type=int, default=300)
    ap.add_argument("--m", type=int, nargs="+", default=[1, 2])
    ap.add_argument("--k", type=int, default=100)
    args = ap.parse_args()

    g = planted_grammar()
    print("seed\t" + "\t".join(f"m={m}" for m in args.m) + "\tseconds")
    for seed in range(args.seeds):
        start = time.perf_counter()
        train = [a.tree for a in sample_treebank(g, args.train, seed)]
        test = [a.tree for a in sample_treebank(g, args.test, 1000 + seed)]
        gold = [debinarize(t) for t in test]
        data = TrainingData.build(train)
        base = train_base_pcfg(train)
        row = []
        for m in args.m:
            est = train_clustering(data, ClusteringConfig(k=args.k, m=m, restarts=10, seed=seed))
            row.append(parseval(gold, [parse(est, base, t.leaves())[0] for t in test]).f1)
        print(f"{seed}\t" + "\t".join(f"{f:.2f}" for f in row)
              + f"\t{time.perf_counter() - start:.1f}")


if __name__ == "__main__":
    main()
