"""Combining the parses of several grammars into one tree per sentence."""
from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .parser import build_tree, span_dp
from .trees import Tree, binarize, debinarize, tree_spans

log = logging.getLogger(__name__)


@dataclass
class CandidateSet:
    """Per-model decoded (binarized) trees for one sentence.

    ``marginals[k]`` maps (label, i, j) to model k's span marginal.
    ``labels`` optionally fixes the label universe and its tie-break order as
    (label, is_interminal) pairs; otherwise labels are taken in first-seen
    order from the candidates and marginal tables.
    """
    trees: list[Tree]
    marginals: list[dict] | None = None
    labels: list[tuple[str, bool]] | None = None
    sentence_id: int = 0
    sources: list = field(default_factory=list)

    def __post_init__(self):
        if not self.trees:
            raise ValueError("candidate set is empty")
        words = self.trees[0].words()
        for t in self.trees[1:]:
            if t.words() != words:
                raise ValueError("candidates disagree on the token sequence")
        if not self.sources:
            self.sources = list(range(len(self.trees)))

    @classmethod
    def from_debinarized(cls, trees, **kw) -> "CandidateSet":
        return cls([binarize(t) for t in trees], **kw)

    @property
    def words(self) -> list[str]:
        return self.trees[0].words()

    def label_universe(self) -> list[tuple[str, bool]]:
        seen: dict[str, bool] = {}
        for lab, inter in self.labels or ():
            seen.setdefault(lab, inter)
        for t in self.trees:
            for node in t.subtrees():
                seen.setdefault(node.label, node.word is None)
        for table in self.marginals or ():
            for (a, i, j) in table:
                seen.setdefault(a, j - i > 1)
        return list(seen.items())


def _coverage_dp(cands: CandidateSet, scores: dict) -> tuple[Tree, float]:
    universe = cands.label_universe()
    names = [a for a, _ in universe]
    col = {a: i for i, a in enumerate(names)}
    inter = np.array([x for _, x in universe], dtype=bool)
    n = len(cands.words)
    table = np.zeros((n + 1, n + 1, len(names)))
    for (a, i, j), v in scores.items():
        table[i, j, col[a]] += v
    ids = np.arange(len(names))
    obj, back = span_dp(n, lambda i, j: table[i, j], ids[~inter], ids[inter])
    return build_tree(back, names, cands.words, 0, n), obj


def coverage_scores(cands: CandidateSet) -> Counter:
    """Occurrence count of each binarized span across the candidates."""
    total: Counter = Counter()
    for t in cands.trees:
        total.update(tree_spans(t))
    return total


def max_tree_coverage(cands: CandidateSet) -> Tree:
    """Binarized tree whose spans occur most often among the candidates."""
    return _coverage_dp(cands, coverage_scores(cands))[0]


def marginal_scores(cands: CandidateSet) -> dict:
    if not cands.marginals or len(cands.marginals) != len(cands.trees):
        raise ValueError("maximal marginal coverage needs one marginal table per model")
    total: dict = {}
    for table in cands.marginals:
        for key, v in table.items():
            total[key] = total.get(key, 0.0) + v
    return total


def max_marginal_coverage(cands: CandidateSet) -> Tree:
    """Binarized tree maximizing span marginals summed over models."""
    return _coverage_dp(cands, marginal_scores(cands))[0]


def span_score(tree: Tree, scores) -> float:
    return float(sum(n * scores.get(key, 0.0) for key, n in tree_spans(tree).items()))


# --------------------------------------------------------------------------
# reranking

MAX_SPAN_BUCKET = 10


def tree_features(tree: Tree, source, marginal_score: float = 0.0) -> dict[str, float]:
    """Rule counts, labelled span-length histogram, right-branching count,
    source model and the candidate's marginal score."""
    t = debinarize(tree)
    feats: Counter = Counter()
    for node in t.subtrees():
        if node.word is None:
            feats["rule:%s>%s" % (node.label, " ".join(c.label for c in node.children))] += 1
            if node.children[-1].word is None:
                feats["rightbranch"] += 1
    for (a, i, j), c in tree_spans(t).items():
        feats[f"len:{a}:{min(j - i, MAX_SPAN_BUCKET)}"] += c
    feats[f"model:{source}"] = 1
    out = {k: float(v) for k, v in feats.items()}
    out["marginal-score"] = float(marginal_score)
    return out


@dataclass
class RerankerModel:
    names: list[str]
    weights: np.ndarray
    l2: float = 1.0

    def __post_init__(self):
        self.ids = {n: i for i, n in enumerate(self.names)}

    def score(self, feats: dict[str, float]) -> float:
        return float(sum(v * self.weights[self.ids[k]] for k, v in feats.items() if k in self.ids))

    def weight(self, name: str) -> float:
        i = self.ids.get(name)
        return 0.0 if i is None else float(self.weights[i])

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"l2": self.l2, "weights": dict(zip(self.names, map(float, self.weights)))},
                      fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path) -> "RerankerModel":
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        names = list(obj["weights"])
        return cls(names, np.array([obj["weights"][n] for n in names]), obj.get("l2", 1.0))


@dataclass
class RerankGroup:
    candidates: list[Tree]
    gold: Tree
    sources: list = field(default_factory=list)
    scores: list[float] = field(default_factory=list)

    def features(self) -> list[dict[str, float]]:
        sources = self.sources or list(range(len(self.candidates)))
        scores = self.scores or [0.0] * len(self.candidates)
        return [tree_features(t, s, v) for t, s, v in zip(self.candidates, sources, scores)]


def _objective(w, groups, l2):
    val = -0.5 * l2 * float(w @ w)
    grad = -l2 * w
    for F, target in groups:
        s = F @ w
        mx = s.max()
        p = np.exp(s - mx)
        z = p.sum()
        p /= z
        val += float(target @ s) - (mx + math.log(z))
        grad = grad + F.T @ (target - p)
    return val, np.asarray(grad).ravel()


def reranker_train(groups: list[RerankGroup], l2: float = 1.0, tol: float = 1e-5,
                   max_iter: int = 20000) -> RerankerModel:
    """L2-regularized conditional log-likelihood of the best-F1 candidates.

    Batch gradient ascent with backtracking line search; the target spreads
    uniformly over candidates tied for the best F1.
    """
    from .evaluate import sentence_f1

    if not groups:
        raise ValueError("no reranker training groups")
    names: dict[str, int] = {}
    built = []
    for g in groups:
        if len({str(t) for t in g.candidates}) < 2:
            log.warning("skipping reranker group with fewer than 2 distinct candidates")
            continue
        feats = g.features()
        for f in feats:
            for k in f:
                names.setdefault(k, len(names))
        f1 = np.array([sentence_f1(g.gold, debinarize(t)) for t in g.candidates])
        best = f1 >= f1.max() - 1e-12
        built.append((feats, best / best.sum()))
    dim = len(names)
    mats = []
    for feats, target in built:
        rows, cols, vals = [], [], []
        for r, f in enumerate(feats):
            for k, v in f.items():
                rows.append(r)
                cols.append(names[k])
                vals.append(v)
        mats.append((sp.csr_matrix((vals, (rows, cols)), shape=(len(feats), dim)), target))
    w = np.zeros(dim)
    step = 1.0
    val, grad = _objective(w, mats, l2)
    for _ in range(max_iter):
        gnorm = float(np.linalg.norm(grad))
        if gnorm < tol:
            break
        while True:
            cand = w + step * grad
            new_val, new_grad = _objective(cand, mats, l2)
            if new_val >= val + 1e-4 * step * gnorm * gnorm or step < 1e-12:
                break
            step *= 0.5
        w, val, grad = cand, new_val, new_grad
        step *= 2.0
    return RerankerModel(list(names), w, l2)


def reranker_select(model: RerankerModel, cands: CandidateSet,
                    scores: list[float] | None = None) -> Tree:
    """Highest-scoring candidate; ties go to the lowest index."""
    scores = scores or [0.0] * len(cands.trees)
    values = [model.score(tree_features(t, s, v))
              for t, s, v in zip(cands.trees, cands.sources, scores)]
    best = max(values)
    return cands.trees[next(i for i, v in enumerate(values) if v >= best)]


# --------------------------------------------------------------------------
# hierarchical plans

OPS = ("model", "maxtre", "maxmrg", "maxent")


class PlanError(ValueError):
    pass


@dataclass
class Plan:
    """Combination DAG: named nodes, each a model leaf or a combinator."""
    nodes: dict[str, dict]
    root: str

    @classmethod
    def from_json(cls, obj) -> "Plan":
        if "nodes" in obj:
            plan = cls(dict(obj["nodes"]), obj["root"])
        else:
            nodes: dict[str, dict] = {}

            def add(node) -> str:
                name = node.get("name") or f"n{len(nodes)}"
                entry = {k: v for k, v in node.items() if k != "children"}
                nodes[name] = entry
                entry["children"] = [add(c) for c in node.get("children", [])]
                return name

            plan = cls(nodes, add(obj))
        plan.check()
        return plan

    @classmethod
    def load(cls, path) -> "Plan":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def order(self) -> list[str]:
        """Children-first order; raises on cycles or dangling references."""
        state: dict[str, int] = {}
        out: list[str] = []

        def visit(name: str):
            if name not in self.nodes:
                raise PlanError(f"plan references unknown node {name!r}")
            if state.get(name) == 1:
                raise PlanError(f"plan has a cycle through {name!r}")
            if state.get(name) == 2:
                return
            state[name] = 1
            for c in self.nodes[name].get("children", []):
                visit(c)
            state[name] = 2
            out.append(name)

        visit(self.root)
        return out

    def check(self) -> None:
        for name in self.order():
            node = self.nodes[name]
            op = node.get("op")
            kids = node.get("children", [])
            if op not in OPS:
                raise PlanError(f"node {name!r}: unknown op {op!r}")
            if op == "model":
                if kids or not isinstance(node.get("index"), int):
                    raise PlanError(f"model leaf {name!r} needs an integer index and no children")
            elif not kids:
                raise PlanError(f"node {name!r}: {op} needs at least one child")
            if op == "maxmrg" and any(self.nodes[c].get("op") != "model" for c in kids):
                raise PlanError(f"node {name!r}: maxmrg children must be model leaves")
            if op == "maxent" and "reranker" not in node:
                raise PlanError(f"node {name!r}: maxent needs a reranker")

    def model_indices(self) -> list[int]:
        return sorted({n["index"] for n in self.nodes.values() if n.get("op") == "model"})


def hierarchical_combine(plan: Plan, trees: list[Tree], marginals: list[dict] | None = None,
                         rerankers: dict[str, RerankerModel] | None = None) -> Tree:
    """Evaluate ``plan`` bottom-up for one sentence.

    ``trees[k]`` is model k's binarized output; rerankers are looked up by
    the ``reranker`` field of maxent nodes.
    """
    rerankers = rerankers or {}
    out: dict[str, Tree] = {}
    score: dict[str, float] = {}
    for name in plan.order():
        node = plan.nodes[name]
        op = node["op"]
        if op == "model":
            k = node["index"]
            if not 0 <= k < len(trees):
                raise PlanError(f"model index {k} out of range")
            out[name] = trees[k]
            score[name] = span_score(trees[k], marginals[k]) if marginals else 0.0
            continue
        kids = node["children"]
        srcs = [plan.nodes[c]["index"] if plan.nodes[c]["op"] == "model" else c for c in kids]
        cands = CandidateSet([out[c] for c in kids], sources=srcs)
        if op == "maxtre":
            out[name] = max_tree_coverage(cands)
        elif op == "maxmrg":
            if not marginals:
                raise PlanError("maxmrg needs marginal tables")
            cands.marginals = [marginals[plan.nodes[c]["index"]] for c in kids]
            out[name] = max_marginal_coverage(cands)
        else:
            model = rerankers.get(node["reranker"])
            if model is None:
                raise PlanError(f"reranker {node['reranker']!r} not loaded")
            out[name] = reranker_select(model, cands, [score[c] for c in kids])
        score[name] = 0.0
    return out[plan.root]
