import numpy as np
import pytest
import scipy.sparse as sp
from scipy.stats import binom

from lpcfg.estimation import ClusteringConfig, TrainingData, train_clustering
from lpcfg.features import SparseFeatureVector
from lpcfg.noise import (NoiseSpec, dropout_features, dropout_matrix, gaussian_perturb,
                         train_ensemble)
from lpcfg.synth import planted_grammar, sample_treebank


@pytest.fixture(scope="module")
def data():
    return TrainingData.build([t.tree for t in sample_treebank(planted_grammar(), 300, seed=8)])


def test_spec_validation_and_aliases():
    assert NoiseSpec("add", 0.1).scheme == "gaussian_additive"
    assert NoiseSpec("mul", 0.1).scheme == "gaussian_multiplicative"
    assert NoiseSpec("dropout", 0.1).tag() == "dropout:0.1"
    with pytest.raises(ValueError):
        NoiseSpec("salt", 0.1)
    with pytest.raises(ValueError):
        NoiseSpec("dropout", 1.5)
    with pytest.raises(ValueError):
        NoiseSpec("add", -0.1)


@pytest.mark.parametrize("scheme", ["dropout", "gaussian_additive", "gaussian_multiplicative"])
def test_zero_sigma_reproduces_unperturbed_model(data, scheme):
    base = ClusteringConfig(m=2, k=8, restarts=3, seed=5)
    plain = train_clustering(data, base)
    noisy = train_clustering(data, ClusteringConfig(m=2, k=8, restarts=3, seed=5,
                                                    noise=NoiseSpec(scheme, 0.0)))
    # dict equality compares every float exactly
    assert noisy.root == plain.root and noisy.binary == plain.binary
    assert noisy.lexical == plain.lexical and noisy.m == plain.m


def test_zero_sigma_primitives_are_identities():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((5, 3))
    assert gaussian_perturb(x, 0.0, "additive", rng) is x
    assert gaussian_perturb(x, 0.0, "multiplicative", rng) is x
    m = sp.random(10, 10, density=0.5, random_state=1, format="csr")
    assert dropout_matrix(m, 0.0, rng) is m
    v = SparseFeatureVector((1, 4), (1.0, 1.0))
    assert dropout_features(v, 0.0, rng) is v


@pytest.mark.parametrize("sigma", [0.05, 0.1, 0.15, 0.2])
def test_dropout_retention_within_binomial_bounds(sigma):
    n = 20_000
    mat = sp.csr_matrix(np.ones((200, 100)))
    kept = dropout_matrix(mat, sigma, np.random.default_rng(int(sigma * 1000))).nnz
    lo, hi = binom.ppf([0.005, 0.995], n, 1.0 - sigma)
    assert lo <= kept <= hi
    v = SparseFeatureVector.indicators(range(n))
    kept_v = len(dropout_features(v, sigma, np.random.default_rng(7)))
    assert lo <= kept_v <= hi


def test_dropout_only_removes_entries():
    mat = sp.random(50, 40, density=0.3, random_state=3, format="csr")
    out = dropout_matrix(mat, 0.3, np.random.default_rng(1))
    diff = mat - out
    assert (out.multiply(diff) != 0).nnz == 0  # removed entries are whole
    assert np.allclose(out.toarray()[out.toarray() != 0], mat.toarray()[out.toarray() != 0])


def test_gaussian_noise_moments():
    rng = np.random.default_rng(0)
    x = np.full((400, 250), 2.0)
    add = gaussian_perturb(x, 0.1, "additive", rng) - x
    mul = gaussian_perturb(x, 0.1, "multiplicative", rng) / x - 1.0
    for eps in (add, mul):
        assert abs(eps.mean()) < 3 * 0.1 / np.sqrt(eps.size)
        assert eps.std() == pytest.approx(0.1, rel=0.01)
    with pytest.raises(ValueError):
        gaussian_perturb(x, 0.1, "sideways", rng)


def test_ensemble_seeds_names_and_diversity(data):
    cfg = ClusteringConfig(m=2, k=8, restarts=2, seed=3)
    grid = [NoiseSpec("dropout", 0.2), NoiseSpec("add", 0.5)]
    members = train_ensemble(data, cfg, grid, 2, workers=2)
    assert [m.name for m in members] == [
        "dropout_s0.2_r0", "dropout_s0.2_r1",
        "gaussian_additive_s0.5_r0", "gaussian_additive_s0.5_r1"]
    assert len({m.seed for m in members}) == 4
    assert all(m.error is None and m.grammar.meta["model"] == m.name for m in members)
    again = train_ensemble(data, cfg, grid, 2, workers=1)
    assert all(a.grammar == b.grammar for a, b in zip(members, again))


def test_ensemble_collects_failures(data, monkeypatch):
    import lpcfg.estimation as est

    def boom(*a, **k):
        raise RuntimeError("svd exploded")

    monkeypatch.setattr(est, "train_clustering", boom)
    members = train_ensemble(data, ClusteringConfig(m=2), [NoiseSpec("dropout", 0.1)], 2)
    assert all(m.grammar is None and "svd exploded" in m.error for m in members)


def test_ensemble_rejects_empty_grid(data):
    with pytest.raises(ValueError):
        train_ensemble(data, ClusteringConfig(), [], 1)
    with pytest.raises(ValueError):
        train_ensemble(data, ClusteringConfig(), [NoiseSpec("dropout", 0.1)], 0)
