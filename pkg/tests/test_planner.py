from itertools import combinations

import numpy as np
import pytest
from pydantic import ValidationError

from core.prng import generator
from planner.comm import a2a_time, moe_comm_time
from planner.costs import max_stage_time
from planner.memory import memory_model, peak_in_flight
from planner.partition import partition_exhaustive, partition_uneven, uniform_cuts, uniform_plan
from planner.run import run_planner, write_planner_artifacts
from planner.simulator import simulate_pipeline, write_trace
from schemas.planner.schemas import TRACE_COLUMNS, CommModel, PipelinePlan, PlannerConfig, StageCostModel
from utils.exceptions import LabError, LabErrorReason


def uniform_costs(n_layers: int, f: float = 1.0, b: float = 2.0, **kwargs) -> StageCostModel:
    return StageCostModel(forward=[f] * n_layers, backward=[b] * n_layers, **kwargs)


def random_costs(rng, n_layers: int, integer: bool = False, **kwargs) -> StageCostModel:
    if integer:
        forward = rng.integers(0, 6, size=n_layers).astype(float).tolist()
        backward = rng.integers(0, 11, size=n_layers).astype(float).tolist()
    else:
        forward = rng.uniform(0.5, 1.5, size=n_layers).tolist()
        backward = rng.uniform(1.0, 3.0, size=n_layers).tolist()
    return StageCostModel(forward=forward, backward=backward, **kwargs)


def exhaustive_partition(costs: StageCostModel, stages: int, recompute):
    """First optimum in lexicographic cut order, pricing every stage from scratch."""
    n = costs.n_layers
    best_cuts, best_time = None, None
    for cuts in combinations(range(1, n), stages - 1):
        bounds = [0, *cuts, n]
        times = []
        for s in range(stages):
            f = sum(costs.forward[bounds[s]: bounds[s + 1]])
            b = sum(costs.backward[bounds[s]: bounds[s + 1]])
            t = f + b
            if s == 0:
                t += costs.embed_extra
            if s == stages - 1:
                t += costs.loss_extra
            if s in recompute:
                t += costs.recompute_factor * f
            times.append(t)
        if best_time is None or max(times) < best_time:
            best_cuts, best_time = list(cuts), max(times)
    return best_cuts, best_time


def test_single_stage_has_no_bubble():
    result = simulate_pipeline(uniform_plan(4, 1, microbatches=5), uniform_costs(4))
    assert result.bubble_fraction == 0.0
    assert result.total_time == 5 * 4 * 3.0


def test_two_stage_single_microbatch_trace_by_hand():
    result = simulate_pipeline(uniform_plan(2, 2, microbatches=1), uniform_costs(2))
    events = [(e.stage, e.event, e.start, e.end) for e in result.trace]
    assert events == [(0, "F", 0.0, 1.0), (1, "F", 1.0, 2.0), (1, "B", 2.0, 4.0), (0, "B", 4.0, 6.0)]
    assert result.total_time == 6.0
    assert result.bubble_fraction == 0.5


def test_two_stage_two_microbatch_trace():
    result = simulate_pipeline(uniform_plan(2, 2, microbatches=2), uniform_costs(2))
    assert result.total_time == 9.0
    assert result.bubble_fraction == pytest.approx(1 / 3)
    assert result.busy == [6.0, 6.0]


@pytest.mark.parametrize("stages", [2, 3, 4])
@pytest.mark.parametrize("microbatches", range(1, 9))
def test_uniform_bubble_matches_closed_form(stages, microbatches):
    result = simulate_pipeline(uniform_plan(stages, stages, microbatches=microbatches), uniform_costs(stages))
    assert result.total_time == pytest.approx((microbatches + stages - 1) * 3.0)
    assert result.bubble_fraction == pytest.approx((stages - 1) / (microbatches + stages - 1), abs=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_more_microbatches_never_grow_the_bubble(seed):
    rng = generator(seed)
    stages = int(rng.integers(2, 5))
    costs = random_costs(rng, 2 * stages)
    bubbles = [
        simulate_pipeline(uniform_plan(2 * stages, stages, microbatches=m), costs).bubble_fraction for m in range(1, 11)
    ]
    assert all(later <= earlier + 1e-12 for earlier, later in zip(bubbles, bubbles[1:]))


def test_simulation_is_replayable():
    costs = random_costs(generator(3), 9, embed_extra=0.5, loss_extra=1.0, recompute_factor=0.3)
    plan = partition_uneven(costs, 3, recompute_stages=[0], microbatches=6)
    assert simulate_pipeline(plan, costs) == simulate_pipeline(plan, costs)


def test_interleaving_shrinks_the_bubble():
    costs = uniform_costs(4)
    plain = simulate_pipeline(uniform_plan(4, 2, microbatches=2), costs)
    interleaved = simulate_pipeline(uniform_plan(4, 2, microbatches=2, virtual=2), costs)
    assert plain.bubble_fraction == pytest.approx(1 / 3)
    assert interleaved.bubble_fraction == pytest.approx(1 / 5)
    assert interleaved.total_time == 15.0


@pytest.mark.parametrize("stages, virtual, microbatches", [(2, 2, 4), (2, 3, 6), (3, 2, 3), (3, 2, 6), (4, 2, 8)])
def test_interleaved_schedule_runs_every_chunk(stages, virtual, microbatches):
    n_layers = stages * virtual
    costs = uniform_costs(n_layers)
    plain = simulate_pipeline(uniform_plan(n_layers, stages, microbatches=microbatches), costs)
    result = simulate_pipeline(uniform_plan(n_layers, stages, microbatches=microbatches, virtual=virtual), costs)
    assert len(result.trace) == 2 * n_layers * microbatches
    assert result.busy == [microbatches * virtual * 3.0] * stages
    assert result.bubble_fraction < plain.bubble_fraction


def test_trace_csv(tmp_path):
    result = simulate_pipeline(uniform_plan(3, 3, microbatches=4), uniform_costs(3))
    lines = write_trace(result, tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0] == ",".join(TRACE_COLUMNS)
    assert len(lines) == 1 + 2 * 3 * 4


def test_plan_layout_is_validated():
    with pytest.raises(ValidationError):
        PipelinePlan(stages=2, ranges=[(0, 2), (3, 4)])
    with pytest.raises(ValidationError):
        PipelinePlan(stages=2, ranges=[(0, 1), (1, 2), (2, 3), (3, 4)], virtual=2, microbatches=3)
    with pytest.raises(ValidationError):
        PipelinePlan(stages=2, ranges=[(0, 1), (1, 2)], recompute_stages=[2])


def test_cost_model_is_validated():
    with pytest.raises(ValidationError):
        StageCostModel(forward=[1.0, -1.0], backward=[1.0, 1.0])
    with pytest.raises(ValidationError):
        StageCostModel(forward=[1.0], backward=[1.0, 1.0])


def test_partition_with_loss_on_last_stage():
    costs = StageCostModel(forward=[1.0] * 4, backward=[0.0] * 4, loss_extra=1.0)
    plan = partition_uneven(costs, 2)
    assert plan.cuts == [2]
    assert max_stage_time(plan, costs) == 3.0


@pytest.mark.parametrize("stages, per_stage", [(2, 3), (3, 2), (4, 3)])
def test_uniform_costs_give_the_uniform_split(stages, per_stage):
    n_layers = stages * per_stage
    plan = partition_uneven(uniform_costs(n_layers), stages)
    assert plan.cuts == uniform_cuts(n_layers, stages)


def test_partition_needs_enough_layers():
    with pytest.raises(LabError) as e:
        partition_uneven(uniform_costs(3), 4)
    assert e.value.reason == LabErrorReason.INVALID_ARGUMENT


def test_partition_matches_exhaustive_search():
    for seed in range(200):
        rng = generator(seed)
        n_layers = int(rng.integers(1, 13))
        stages = int(rng.integers(1, min(4, n_layers) + 1))
        recompute = sorted(int(s) for s in np.flatnonzero(rng.random(stages) < 0.4))
        costs = random_costs(
            rng,
            n_layers,
            integer=True,
            embed_extra=float(rng.integers(0, 4)),
            loss_extra=float(rng.integers(0, 6)),
            recompute_factor=float(rng.choice([0.0, 0.5, 1.0])),
        )
        plan = partition_uneven(costs, stages, recompute_stages=recompute)
        cuts, optimum = exhaustive_partition(costs, stages, set(recompute))
        assert plan.cuts == cuts, f"seed {seed}"
        assert max_stage_time(plan, costs) == optimum
        assert partition_exhaustive(costs, stages, recompute) == (cuts, optimum)


@pytest.mark.parametrize("seed", range(25))
def test_uneven_never_worse_than_uniform(seed):
    rng = generator(seed)
    stages = int(rng.integers(2, 5))
    n_layers = int(rng.integers(stages, 17))
    costs = random_costs(rng, n_layers, embed_extra=rng.uniform(0, 3), loss_extra=rng.uniform(0, 3))
    uneven = partition_uneven(costs, stages)
    assert max_stage_time(uneven, costs) <= max_stage_time(uniform_plan(n_layers, stages), costs) + 1e-12


def test_in_flight_depth_rule():
    for m in range(1, 6):
        assert peak_in_flight(uniform_plan(3, 1, microbatches=m), 0) == 1
    plan = uniform_plan(8, 4, microbatches=6)
    assert [peak_in_flight(plan, s) for s in range(4)] == [4, 3, 2, 1]
    plan = uniform_plan(8, 4, microbatches=2)
    assert [peak_in_flight(plan, s) for s in range(4)] == [2, 2, 2, 1]


def test_memory_follows_depth_rule():
    costs = uniform_costs(8, act_memory=[2.0] * 8, weight_memory=[5.0] * 8)
    memory = memory_model(uniform_plan(8, 4, microbatches=8), costs)
    # each stage: two layers of weights plus min(m, p - s) microbatches of two layers' activations
    assert memory == [10.0 + 4 * 4.0, 10.0 + 3 * 4.0, 10.0 + 2 * 4.0, 10.0 + 1 * 4.0]
    assert memory[0] >= memory[-1]


@pytest.mark.parametrize("seed", range(20))
def test_recomputation_never_increases_memory(seed):
    rng = generator(seed)
    stages = int(rng.integers(1, 5))
    n_layers = stages * int(rng.integers(1, 4))
    costs = StageCostModel(
        forward=[1.0] * n_layers,
        backward=[2.0] * n_layers,
        act_memory=rng.uniform(0, 10, size=n_layers).tolist(),
        weight_memory=rng.uniform(0, 10, size=n_layers).tolist(),
        retention=float(rng.uniform(0, 1)),
    )
    microbatches = int(rng.integers(1, 9))
    base = memory_model(uniform_plan(n_layers, stages, microbatches=microbatches), costs)
    for stage in range(stages):
        recomputed = memory_model(
            uniform_plan(n_layers, stages, microbatches=microbatches, recompute_stages=[stage]), costs
        )
        assert recomputed[stage] <= base[stage]
        assert all(recomputed[s] == base[s] for s in range(stages) if s != stage)


def test_all_to_all_cost():
    intra = CommModel(ep_degree=8, intra_bw=4e11, inter_bw=5e10)
    inter = CommModel(ep_degree=16, intra_bw=4e11, inter_bw=5e10)
    assert a2a_time(0, intra) == 0.0
    assert a2a_time(1e9, intra) == pytest.approx(2.5e-3)
    assert a2a_time(1e9, intra) < a2a_time(1e9, inter)
    overlapped = CommModel(overlap_fraction=0.5, combine_cost=1e-4)
    assert moe_comm_time(1e9, overlapped) == pytest.approx(2 * 2.5e-3 * 0.5 + 1e-4)
    with pytest.raises(LabError):
        a2a_time(-1, intra)
    with pytest.raises(ValidationError):
        CommModel(intra_bw=1e9, inter_bw=2e9)


def test_run_planner_artifacts(tmp_path):
    costs = random_costs(generator(4), 8, embed_extra=1.0, loss_extra=2.0, recompute_factor=0.3)
    config = PlannerConfig(costs=costs, stages=2, microbatches=4, virtual=2, recompute_stages=[0])
    result = run_planner(config)
    metrics = result.metrics()
    assert metrics["uneven_max_stage_time"] <= metrics["uniform_max_stage_time"]
    assert "interleaved_bubble_fraction" in metrics
    write_planner_artifacts(result, tmp_path)
    for name in ("plan_uneven.json", "plan_uniform.json", "plan_interleaved.json", "trace_uneven.csv", "stages.csv"):
        assert (tmp_path / name).exists()
