# mixture/sampling.py
from typing import List, Sequence

import numpy as np

from schemas.mixture.schemas import MixtureSpec
from utils.exceptions import LabErrorReason, require


def _spec(weights: np.ndarray) -> MixtureSpec:
    weights = np.asarray(weights, dtype=np.float64)
    return MixtureSpec(weights=(weights / weights.sum()).tolist())


def corners(n_shards: int) -> List[MixtureSpec]:
    return [_spec(np.eye(n_shards)[i]) for i in range(n_shards)]


def dirichlet_draws(n_shards: int, n: int, rng: np.random.Generator) -> List[MixtureSpec]:
    if n_shards == 1:
        return [_spec(np.ones(1)) for _ in range(n)]
    return [_spec(w) for w in rng.dirichlet(np.ones(n_shards), size=n)]


def sample_mixtures(n_shards: int, n: int, rng: np.random.Generator) -> List[MixtureSpec]:
    """n Dirichlet(1, ..., 1) draws followed by the S one-hot corners."""
    require(n >= 1, LabErrorReason.INVALID_ARGUMENT, "need at least one mixture", n=n)
    require(n_shards >= 1, LabErrorReason.INVALID_ARGUMENT, "need at least one shard")
    return dirichlet_draws(n_shards, n, rng) + corners(n_shards)


def apportion(weights: Sequence[float], budget: int) -> np.ndarray:
    """
    Integer token counts summing exactly to ``budget``: floor(w * budget) per shard,
    then the leftover tokens go to the largest fractional parts (lowest index on ties).
    """
    require(budget >= 1, LabErrorReason.INVALID_ARGUMENT, "token budget must be >= 1", budget=budget)
    exact = np.asarray(weights, dtype=np.float64) * budget
    counts = np.floor(exact).astype(np.int64)
    leftover = budget - int(counts.sum())
    if leftover > 0:
        order = np.argsort(-(exact - counts), kind="stable")
        counts[order[:leftover]] += 1
    return counts
