# planner/run.py
"""Uneven partition vs uniform split for one cost model, simulated and priced."""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Union

from planner.comm import a2a_time, moe_comm_time
from planner.costs import max_stage_time
from planner.memory import memory_model
from planner.partition import partition_uneven, uniform_plan
from planner.simulator import SimulationResult, simulate_pipeline, write_trace
from schemas.planner.schemas import PipelinePlan, PlannerConfig
from utils.logger import get_logger
from utils.reporting import write_csv, write_json

logger = get_logger(__name__)


@dataclass
class PlannedPipeline:
    plan: PipelinePlan
    simulation: SimulationResult
    memory: List[float]
    max_stage_time: float


@dataclass
class PlannerResult:
    uneven: PlannedPipeline
    uniform: PlannedPipeline
    interleaved: Optional[PlannedPipeline]
    a2a_time: float
    moe_comm_time: float

    def metrics(self) -> Dict[str, float]:
        metrics = {
            "a2a_time": self.a2a_time,
            "moe_comm_time": self.moe_comm_time,
        }
        for label, planned in (("uneven", self.uneven), ("uniform", self.uniform), ("interleaved", self.interleaved)):
            if planned is None:
                continue
            metrics[f"{label}_total_time"] = planned.simulation.total_time
            metrics[f"{label}_bubble_fraction"] = planned.simulation.bubble_fraction
            metrics[f"{label}_max_stage_time"] = planned.max_stage_time
            metrics[f"{label}_peak_memory"] = max(planned.memory)
        return metrics


def plan_pipeline(plan: PipelinePlan, config: PlannerConfig) -> PlannedPipeline:
    return PlannedPipeline(
        plan=plan,
        simulation=simulate_pipeline(plan, config.costs),
        memory=memory_model(plan, config.costs),
        max_stage_time=max_stage_time(plan, config.costs),
    )


def run_planner(config: PlannerConfig) -> PlannerResult:
    n_layers = config.costs.n_layers
    uneven = partition_uneven(config.costs, config.stages, config.recompute_stages, config.microbatches)
    uniform = uniform_plan(n_layers, config.stages, config.microbatches, recompute_stages=config.recompute_stages)
    interleaved = None
    if config.virtual > 1:
        interleaved = plan_pipeline(
            uniform_plan(n_layers, config.stages, config.microbatches, config.virtual, config.recompute_stages),
            config,
        )
    result = PlannerResult(
        uneven=plan_pipeline(uneven, config),
        uniform=plan_pipeline(uniform, config),
        interleaved=interleaved,
        a2a_time=a2a_time(config.a2a_bytes, config.comm),
        moe_comm_time=moe_comm_time(config.a2a_bytes, config.comm),
    )
    logger.info(
        "uneven cuts %s: slowest stage %.4g (uniform %.4g), bubble %.4f (uniform %.4f)",
        uneven.cuts,
        result.uneven.max_stage_time,
        result.uniform.max_stage_time,
        result.uneven.simulation.bubble_fraction,
        result.uniform.simulation.bubble_fraction,
    )
    return result


def write_planner_artifacts(result: PlannerResult, out_dir: Union[str, Path]) -> None:
    out_dir = Path(out_dir)
    rows = []
    for label, planned in (("uneven", result.uneven), ("uniform", result.uniform), ("interleaved", result.interleaved)):
        if planned is None:
            continue
        write_json(out_dir / f"plan_{label}.json", planned.plan.model_dump())
        write_trace(planned.simulation, out_dir / f"trace_{label}.csv")
        rows.extend(
            {"plan": label, "stage": s, "busy": planned.simulation.busy[s], "peak_memory": memory}
            for s, memory in enumerate(planned.memory)
        )
    write_csv(out_dir / "stages.csv", rows, columns=["plan", "stage", "busy", "peak_memory"])
