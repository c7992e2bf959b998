# planner/costs.py
from typing import List, Tuple

import numpy as np

from schemas.planner.schemas import PipelinePlan, StageCostModel
from utils.exceptions import LabErrorReason, require


class CostTable:
    """Prefix sums over a cost model so any contiguous layer range is priced in O(1)."""

    def __init__(self, costs: StageCostModel):
        self.costs = costs
        self.forward = np.concatenate([[0.0], np.cumsum(costs.forward, dtype=np.float64)])
        self.backward = np.concatenate([[0.0], np.cumsum(costs.backward, dtype=np.float64)])
        self.act = np.concatenate([[0.0], np.cumsum(costs.act_memory, dtype=np.float64)])
        self.weights = np.concatenate([[0.0], np.cumsum(costs.weight_memory, dtype=np.float64)])

    @property
    def n_layers(self) -> int:
        return self.costs.n_layers

    def chunk(self, chunk: int, n_chunks: int, start: int, end: int, recompute: bool) -> Tuple[float, float]:
        """(forward, backward) time of layers [start, end) placed as global chunk ``chunk``."""
        f = float(self.forward[end] - self.forward[start])
        b = float(self.backward[end] - self.backward[start])
        fwd = f
        if chunk == 0:
            fwd += self.costs.embed_extra
        if chunk == n_chunks - 1:
            fwd += self.costs.loss_extra
        bwd = b + (self.costs.recompute_factor * f if recompute else 0.0)
        return fwd, bwd

    def segment(self, stage: int, n_stages: int, start: int, end: int, recompute: bool) -> float:
        fwd, bwd = self.chunk(stage, n_stages, start, end, recompute)
        return fwd + bwd

    def activations(self, start: int, end: int, recompute: bool) -> float:
        act = float(self.act[end] - self.act[start])
        return act * self.costs.retention if recompute else act

    def weight_memory(self, start: int, end: int) -> float:
        return float(self.weights[end] - self.weights[start])


def chunk_costs(plan: PipelinePlan, costs: StageCostModel) -> List[Tuple[float, float]]:
    """(forward, backward) time of every global chunk of ``plan``."""
    require(
        plan.n_layers == costs.n_layers,
        LabErrorReason.CONFIG_ERROR,
        f"plan covers {plan.n_layers} layers, cost model has {costs.n_layers}",
    )
    table = CostTable(costs)
    n_chunks = len(plan.ranges)
    recompute = set(plan.recompute_stages)
    return [
        table.chunk(g, n_chunks, start, end, g % plan.stages in recompute)
        for g, (start, end) in enumerate(plan.ranges)
    ]


def stage_times(plan: PipelinePlan, costs: StageCostModel) -> List[float]:
    """Forward plus backward time of one microbatch on every stage."""
    times = [0.0] * plan.stages
    for g, (fwd, bwd) in enumerate(chunk_costs(plan, costs)):
        times[g % plan.stages] += fwd + bwd
    return times


def max_stage_time(plan: PipelinePlan, costs: StageCostModel) -> float:
    return max(stage_times(plan, costs))
