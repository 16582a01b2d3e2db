"""Feature perturbation schemes and perturbed-ensemble training."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .features import SparseFeatureVector

log = logging.getLogger(__name__)

SCHEMES = ("none", "dropout", "gaussian_additive", "gaussian_multiplicative")
ALIASES = {"add": "gaussian_additive", "mul": "gaussian_multiplicative",
           "additive": "gaussian_additive", "multiplicative": "gaussian_multiplicative",
           "dropout": "dropout", "none": "none"}


@dataclass(frozen=True)
class NoiseSpec:
    scheme: str = "none"
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        scheme = ALIASES.get(self.scheme, self.scheme)
        object.__setattr__(self, "scheme", scheme)
        if scheme not in SCHEMES:
            raise ValueError(f"unknown noise scheme {self.scheme!r}")
        if scheme == "dropout" and not 0.0 <= self.sigma <= 1.0:
            raise ValueError("dropout sigma must lie in [0, 1]")
        if scheme.startswith("gaussian") and self.sigma < 0.0:
            raise ValueError("gaussian sigma must be >= 0")

    def tag(self) -> str:
        if self.scheme == "none":
            return "none"
        return f"{self.scheme}:{self.sigma!r}"


def dropout_features(vector: SparseFeatureVector, sigma: float,
                     rng: np.random.Generator) -> SparseFeatureVector:
    """Remove each stored entry independently with probability ``sigma``."""
    if sigma <= 0.0:
        return vector
    keep = rng.random(len(vector.ids)) >= sigma
    return SparseFeatureVector(tuple(i for i, k in zip(vector.ids, keep) if k),
                               tuple(v for v, k in zip(vector.values, keep) if k))


def dropout_matrix(mat: sp.csr_matrix, sigma: float, rng: np.random.Generator) -> sp.csr_matrix:
    """Row-major dropout over every stored entry of a CSR matrix."""
    if sigma <= 0.0:
        return mat
    out = mat.tocsr(copy=True)
    out.data = out.data * (rng.random(out.nnz) >= sigma)
    out.eliminate_zeros()
    return out


def gaussian_perturb(x: np.ndarray, sigma: float, mode: str,
                     rng: np.random.Generator) -> np.ndarray:
    """``x + eps`` or ``x * (1 + eps)`` with fresh N(0, sigma^2) noise per entry."""
    if mode not in ("additive", "multiplicative"):
        raise ValueError(f"unknown gaussian mode {mode!r}")
    if sigma == 0.0:
        return x
    eps = rng.normal(0.0, sigma, size=np.shape(x))
    if mode == "additive":
        return x + eps
    return x * (1.0 + eps)


# --------------------------------------------------------------------------
# ensembles

@dataclass
class EnsembleMember:
    spec: NoiseSpec
    replicate: int
    seed: int
    grammar: object = None
    seconds: float = 0.0
    error: str | None = None

    @property
    def name(self) -> str:
        sigma = "0" if self.spec.scheme == "none" else repr(self.spec.sigma)
        return f"{self.spec.scheme}_s{sigma}_r{self.replicate}"


def train_ensemble(treebank, base_config, grid: list[NoiseSpec],
                   models_per_spec: int, workers: int | None = None) -> list[EnsembleMember]:
    """Train one model per (spec, replicate).

    Each model gets seed ``derive_seed(master, scheme, sigma, replicate)``,
    where the master seed is ``base_config.seed``. Failures are collected in
    ``EnsembleMember.error`` rather than raised.
    """
    from .estimation import TrainingData, derive_seed, num_threads, train_clustering

    if not grid:
        raise ValueError("empty noise grid")
    if models_per_spec < 1:
        raise ValueError("models_per_spec must be >= 1")
    data = treebank if isinstance(treebank, TrainingData) else TrainingData.build(
        treebank, base_config.head_rules)
    members = []
    for spec in grid:
        for r in range(models_per_spec):
            seed = derive_seed(base_config.seed, spec.scheme, repr(spec.sigma), r)
            members.append(EnsembleMember(replace(spec, seed=seed), r, seed))

    def run(member: EnsembleMember) -> EnsembleMember:
        start = time.perf_counter()
        try:
            cfg = replace(base_config, seed=member.seed, noise=member.spec)
            member.grammar = train_clustering(data, cfg)
            member.grammar.meta["model"] = member.name
        except Exception as exc:  # collected, reported by the caller
            log.warning("model %s failed: %s", member.name, exc)
            member.error = f"{type(exc).__name__}: {exc}"
        member.seconds = time.perf_counter() - start
        return member

    with ThreadPoolExecutor(workers or num_threads()) as pool:
        return list(pool.map(run, members))
