# planner/simulator.py
"""
Discrete-event simulation of a 1F1B pipeline schedule.

Every stage runs its operations in a fixed order (warmup forwards, then one
forward / one backward, then cooldown backwards; the interleaved variant uses
the usual microbatch-group order over virtual chunks). An operation starts when
its stage is free and its producer has finished: the previous chunk's forward
for a forward, the next chunk's backward for a backward. Communication is free.
"""
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Tuple, Union

from planner.costs import chunk_costs
from schemas.planner.schemas import TRACE_COLUMNS, PipelinePlan, StageCostModel
from utils.exceptions import LabError, LabErrorReason
from utils.reporting import write_csv

FORWARD = "F"
BACKWARD = "B"

# (event, virtual chunk index on the stage, microbatch)
Op = Tuple[str, int, int]


@dataclass
class TraceEvent:
    stage: int
    chunk: int
    microbatch: int
    event: str
    start: float
    end: float


@dataclass
class SimulationResult:
    trace: List[TraceEvent]
    total_time: float
    bubble_fraction: float
    busy: List[float]
    critical_stage: int

    def trace_rows(self) -> List[Dict[str, object]]:
        return [asdict(event) for event in self.trace]


def warmup_count(plan: PipelinePlan, stage: int) -> int:
    p, v, m = plan.stages, plan.virtual, plan.microbatches
    if v == 1:
        return min(p - stage - 1, m)
    total = m * v
    if m == p:
        return total
    return min((p - stage - 1) * 2 + (v - 1) * p, total)


def _slot(k: int, plan: PipelinePlan, forward: bool) -> Tuple[int, int]:
    p, v = plan.stages, plan.virtual
    group, in_group = divmod(k, p * v)
    chunk = in_group // p
    if not forward:
        chunk = v - 1 - chunk
    return chunk, group * p + k % p


def stage_order(plan: PipelinePlan, stage: int) -> List[Op]:
    total = plan.microbatches * plan.virtual
    warmup = warmup_count(plan, stage)
    order: List[Op] = [(FORWARD, *_slot(k, plan, True)) for k in range(warmup)]
    for i in range(total - warmup):
        order.append((FORWARD, *_slot(warmup + i, plan, True)))
        order.append((BACKWARD, *_slot(i, plan, False)))
    order.extend((BACKWARD, *_slot(i, plan, False)) for i in range(total - warmup, total))
    return order


def simulate_pipeline(plan: PipelinePlan, costs: StageCostModel) -> SimulationResult:
    p = plan.stages
    n_chunks = len(plan.ranges)
    durations = chunk_costs(plan, costs)
    orders = [stage_order(plan, s) for s in range(p)]
    cursor = [0] * p
    free = [0.0] * p
    # (event, global chunk, microbatch) -> end time
    finished: Dict[Tuple[str, int, int], float] = {}
    trace: List[TraceEvent] = []

    def producer(event: str, g: int, mb: int):
        if event == FORWARD:
            return (FORWARD, g - 1, mb) if g > 0 else None
        return (BACKWARD, g + 1, mb) if g < n_chunks - 1 else (FORWARD, g, mb)

    remaining = sum(len(o) for o in orders)
    while remaining:
        progressed = False
        for s in range(p):
            while cursor[s] < len(orders[s]):
                event, chunk, mb = orders[s][cursor[s]]
                g = chunk * p + s
                dep = producer(event, g, mb)
                if dep is not None and dep not in finished:
                    break
                start = max(free[s], finished[dep] if dep is not None else 0.0)
                fwd, bwd = durations[g]
                end = start + (fwd if event == FORWARD else bwd)
                finished[(event, g, mb)] = end
                free[s] = end
                trace.append(TraceEvent(s, g, mb, event, start, end))
                cursor[s] += 1
                remaining -= 1
                progressed = True
        if not progressed:
            raise LabError(LabErrorReason.INVALID_ARGUMENT, "pipeline schedule deadlocked", stages=p)

    trace.sort(key=lambda e: (e.start, e.stage, e.end))
    busy = [0.0] * p
    for e in trace:
        busy[e.stage] += e.end - e.start
    total = max((e.end for e in trace), default=0.0)
    critical = max(range(p), key=lambda s: (busy[s], -s))
    bubble = (total - busy[critical]) / total if total > 0 else 0.0
    return SimulationResult(trace, total, bubble, busy, critical)


def write_trace(result: SimulationResult, path: Union[str, Path]) -> Path:
    return write_csv(path, result.trace_rows(), columns=TRACE_COLUMNS)
