# planner/partition.py
"""
Contiguous layer partitioning for a pipeline.

``partition_uneven`` minimises the slowest stage's per-microbatch time, where
the first stage also pays the embedding, the last stage the loss, and
recomputing stages re-run part of their forward in backward. Among optimal
partitions it returns the one with the lexicographically smallest cut points.
"""
import math
from itertools import combinations
from typing import Iterable, List, Sequence, Tuple

from planner.costs import CostTable
from schemas.planner.schemas import PipelinePlan, StageCostModel
from utils.exceptions import LabErrorReason, require
from utils.logger import get_logger

logger = get_logger(__name__)


def ranges_from_cuts(cuts: Sequence[int], n_layers: int) -> List[Tuple[int, int]]:
    bounds = [0, *cuts, n_layers]
    return [(bounds[i], bounds[i + 1]) for i in range(len(bounds) - 1)]


def uniform_cuts(n_layers: int, parts: int) -> List[int]:
    """Equal chunk sizes; when they cannot be equal the trailing chunks get one layer more."""
    require(1 <= parts <= n_layers, LabErrorReason.INVALID_ARGUMENT, f"cannot split {n_layers} layers into {parts} chunks")
    base, extra = divmod(n_layers, parts)
    sizes = [base] * (parts - extra) + [base + 1] * extra
    cuts, cursor = [], 0
    for size in sizes[:-1]:
        cursor += size
        cuts.append(cursor)
    return cuts


def uniform_plan(
    n_layers: int,
    stages: int,
    microbatches: int = 1,
    virtual: int = 1,
    recompute_stages: Iterable[int] = (),
) -> PipelinePlan:
    return PipelinePlan(
        stages=stages,
        ranges=ranges_from_cuts(uniform_cuts(n_layers, stages * virtual), n_layers),
        virtual=virtual,
        microbatches=microbatches,
        recompute_stages=list(recompute_stages),
    )


def partition_uneven(
    costs: StageCostModel,
    stages: int,
    recompute_stages: Iterable[int] = (),
    microbatches: int = 1,
) -> PipelinePlan:
    n = costs.n_layers
    require(
        stages <= n,
        LabErrorReason.INVALID_ARGUMENT,
        f"{stages} pipeline stages need at least as many layers, got {n}",
        stages=stages,
        layers=n,
    )
    recompute = set(recompute_stages)
    table = CostTable(costs)

    def segment(stage: int, start: int, end: int) -> float:
        return table.segment(stage, stages, start, end, stage in recompute)

    # best[s][j]: smallest achievable max stage time putting layers [0, j) on stages [0, s)
    best = [[math.inf] * (n + 1) for _ in range(stages + 1)]
    best[0][0] = 0.0
    for s in range(1, stages + 1):
        for j in range(s, n - (stages - s) + 1):
            best[s][j] = min(max(best[s - 1][i], segment(s - 1, i, j)) for i in range(s - 1, j))
    optimum = best[stages][n]

    # feasible[s][i]: layers [i, n) fit on stages [s, p) without exceeding the optimum
    feasible = [[False] * (n + 1) for _ in range(stages + 1)]
    feasible[stages][n] = True
    for s in range(stages - 1, -1, -1):
        for i in range(n):
            feasible[s][i] = any(
                feasible[s + 1][j] and segment(s, i, j) <= optimum for j in range(i + 1, n + 1)
            )

    cuts, start = [], 0
    for s in range(stages - 1):
        end = next(j for j in range(start + 1, n + 1) if feasible[s + 1][j] and segment(s, start, j) <= optimum)
        cuts.append(end)
        start = end

    plan = PipelinePlan(
        stages=stages,
        ranges=ranges_from_cuts(cuts, n),
        microbatches=microbatches,
        recompute_stages=sorted(recompute),
    )
    logger.debug("uneven partition %s, slowest stage %.6g", cuts, optimum)
    return plan


def partition_exhaustive(
    costs: StageCostModel,
    stages: int,
    recompute_stages: Iterable[int] = (),
) -> Tuple[List[int], float]:
    """Brute force over every cut placement; the first optimum in lexicographic cut order."""
    n = costs.n_layers
    require(stages <= n, LabErrorReason.INVALID_ARGUMENT, f"{stages} pipeline stages need at least {stages} layers")
    recompute = set(recompute_stages)
    table = CostTable(costs)
    best_cuts, best_time = None, math.inf
    for cuts in combinations(range(1, n), stages - 1):
        slowest = max(
            table.segment(s, stages, start, end, s in recompute)
            for s, (start, end) in enumerate(ranges_from_cuts(cuts, n))
        )
        if slowest < best_time:
            best_cuts, best_time = list(cuts), slowest
    return best_cuts, best_time
