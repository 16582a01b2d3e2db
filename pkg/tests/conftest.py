import random
import time

import pytest
from hypothesis import settings, strategies as st

from lpcfg.trees import Tree
from oracles import exactness_instances

settings.register_profile("default", deadline=None)
settings.load_profile("default")

# wall-clock seconds of expensive fixtures, for runtime budgets
TIMINGS: dict[str, float] = {}

LABELS = ["S", "NP", "VP", "PP", "SBAR"]
TAGS = ["D", "N", "V", "P", "ADJ"]
WORDS = ["the", "dog", "saw", "a", "cat", "with", "telescope"]


@st.composite
def raw_trees(draw, depth=4):
    """n-ary trees with unary chains, labels free of binarization markers."""
    if depth == 0 or draw(st.booleans()) and depth < 4:
        return Tree(draw(st.sampled_from(TAGS)), word=draw(st.sampled_from(WORDS)))
    kids = draw(st.lists(raw_trees(depth=depth - 1), min_size=1, max_size=4))
    return Tree(draw(st.sampled_from(LABELS)), tuple(kids))


def random_raw_tree(rng: random.Random, depth: int = 4) -> Tree:
    if depth == 0 or (depth < 4 and rng.random() < 0.4):
        return Tree(rng.choice(TAGS), word=rng.choice(WORDS))
    kids = tuple(random_raw_tree(rng, depth - 1) for _ in range(rng.randint(1, 4)))
    return Tree(rng.choice(LABELS), kids)


@pytest.fixture(scope="session")
def exact_instances():
    """200 random small grammars with a parseable sentence of <= 6 tokens each,
    plus the brute-force Z and marginals."""
    start = time.perf_counter()
    out = exactness_instances(200, seed=0)
    TIMINGS["exact_instances"] = time.perf_counter() - start
    return out


G0_TEXT = """lpcfg-grammar 1
symbol S I 1
symbol A P 1
word a
word b
root S 0 1.0
binary S 0 A 0 A 0 1.0
lex A 0 a 0.4
lex A 0 b 0.6
"""


@pytest.fixture
def g0():
    from lpcfg.grammar import loads
    return loads(G0_TEXT)
