"""PARSEVAL labelled bracket scoring and oracle selection."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .trees import Tree


def brackets(tree: Tree) -> Counter:
    """Labelled spans of a debinarized tree; preterminals excluded, root kept."""
    out: Counter = Counter()

    def walk(node: Tree, i: int) -> int:
        if node.word is not None:
            return i + 1
        j = i
        for c in node.children:
            j = walk(c, j)
        out[(node.label, i, j)] += 1
        return j

    walk(tree, 0)
    return out


@dataclass
class Score:
    matched: int = 0
    gold: int = 0
    predicted: int = 0
    exact: int = 0
    sentences: int = 0
    failures: int = 0
    per_sentence: list = field(default_factory=list)

    @property
    def precision(self) -> float:
        return 100.0 * self.matched / self.predicted if self.predicted else 0.0

    @property
    def recall(self) -> float:
        return 100.0 * self.matched / self.gold if self.gold else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    @property
    def exact_match(self) -> float:
        return 100.0 * self.exact / self.sentences if self.sentences else 0.0

    def summary(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                "exact_match": self.exact_match, "sentences": self.sentences,
                "failures": self.failures, "matched": self.matched,
                "gold_brackets": self.gold, "predicted_brackets": self.predicted}


def _prf(matched: int, gold: int, pred: int) -> tuple[float, float, float]:
    p = matched / pred if pred else 0.0
    r = matched / gold if gold else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def sentence_f1(gold: Tree, predicted: Tree) -> float:
    """Sentence F1 in [0, 1]; no shared brackets gives 0, two empty sets give 1."""
    g, p = brackets(gold), brackets(predicted)
    if not g and not p:
        return 1.0
    return _prf(sum((g & p).values()), sum(g.values()), sum(p.values()))[2]


def parseval(gold: list[Tree], predicted: list[Tree | None],
             failures: set[int] | None = None, max_len: int | None = None) -> Score:
    """Corpus-level micro-averaged labelled bracket scores.

    A missing prediction (None), a prediction over a different token
    sequence, or an index listed in ``failures`` counts as a failure. Missing
    and mismatched predictions contribute no brackets; listed failures are
    still scored.
    """
    failures = failures or set()
    score = Score()
    preds = list(predicted) + [None] * max(0, len(gold) - len(predicted))
    for idx, (g, p) in enumerate(zip(gold, preds)):
        words = g.words()
        if max_len is not None and len(words) > max_len:
            continue
        gb = brackets(g)
        score.sentences += 1
        score.gold += sum(gb.values())
        if p is None or p.words() != words:
            score.failures += 1
            score.per_sentence.append((idx, 0.0, 0.0, 0.0))
            continue
        if idx in failures:
            score.failures += 1
        pb = brackets(p)
        m = sum((gb & pb).values())
        score.matched += m
        score.predicted += sum(pb.values())
        score.exact += gb == pb
        pr = _prf(m, sum(gb.values()), sum(pb.values()))
        score.per_sentence.append((idx, *(100.0 * x for x in pr)))
    return score


def oracle_f1(gold: list[Tree], candidates: list[list[Tree]]) -> tuple[Score, list[int]]:
    """Per sentence, take the candidate with the best sentence F1 (ties to the
    lowest index) and score the resulting selection."""
    picks = []
    for g, cands in zip(gold, candidates):
        if not cands:
            raise ValueError("oracle needs at least one candidate per sentence")
        f = [sentence_f1(g, c) if c.words() == g.words() else -1.0 for c in cands]
        best = max(f)
        picks.append(f.index(best))
    chosen = [c[i] for c, i in zip(candidates, picks)]
    return parseval(gold, chosen), picks
