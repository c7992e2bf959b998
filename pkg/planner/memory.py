# planner/memory.py
from typing import List

from planner.costs import CostTable
from planner.simulator import FORWARD, stage_order
from schemas.planner.schemas import PipelinePlan, StageCostModel


def peak_in_flight(plan: PipelinePlan, stage: int) -> int:
    """Most chunk-microbatches whose forward ran and whose backward has not, on ``stage``."""
    outstanding = peak = 0
    for event, _, _ in stage_order(plan, stage):
        outstanding += 1 if event == FORWARD else -1
        peak = max(peak, outstanding)
    return peak


def memory_model(plan: PipelinePlan, costs: StageCostModel) -> List[float]:
    """
    Peak memory of every stage: its weights plus the activations it holds while
    the schedule keeps microbatches in flight. Under plain 1F1B stage s holds
    min(m, p - s) microbatches; recomputing stages keep only ``retention`` of
    their activations.
    """
    table = CostTable(costs)
    recompute = set(plan.recompute_stages)
    peaks = []
    for s in range(plan.stages):
        chunks = plan.chunks_of(s)
        weights = sum(table.weight_memory(*plan.ranges[g]) for g in chunks)
        per_chunk = {v: table.activations(*plan.ranges[g], s in recompute) for v, g in enumerate(chunks)}
        held = peak = 0.0
        for event, chunk, _ in stage_order(plan, s):
            held += per_chunk[chunk] if event == FORWARD else -per_chunk[chunk]
            peak = max(peak, held)
        peaks.append(weights + peak)
    return peaks
