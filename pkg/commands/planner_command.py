# commands/planner_command.py
from typing import Optional

import typer

from commands.common import exit_on_error, finish, load_config, run_context
from planner.run import run_planner, write_planner_artifacts
from schemas.planner.schemas import PlannerConfig

planner_router = typer.Typer()

COMMAND = "plan-parallel"


@planner_router.command(COMMAND)
def plan_parallel(
    ctx: typer.Context,
    stages: Optional[int] = typer.Option(None, min=1, help="Pipeline stages."),
    microbatches: Optional[int] = typer.Option(None, min=1),
    virtual: Optional[int] = typer.Option(None, min=1, help="Virtual chunks per stage for the interleaved schedule."),
):
    """Uneven pipeline partition, 1F1B simulation and memory model against the uniform split."""
    run = run_context(ctx)
    with exit_on_error(COMMAND):
        config = load_config(
            run, PlannerConfig, COMMAND, {"stages": stages, "microbatches": microbatches, "virtual": virtual}
        )
        result = run_planner(config)
        write_planner_artifacts(result, run.out_dir(COMMAND))
        finish(run, COMMAND, config, result.metrics())
