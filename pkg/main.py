# main.py
from pathlib import Path
from typing import Optional

import typer

import settings
from commands.acceptance_command import acceptance_router
from commands.align_command import align_router
from commands.common import RunContext
from commands.eval_command import eval_router
from commands.mixture_command import mixture_router
from commands.planner_command import planner_router
from commands.pretrain_command import pretrain_router
from commands.quantize_command import quantize_router
from commands.reward_command import reward_router
from commands.sft_command import sft_router
from commands.synthetic_command import synthetic_router
from utils.logger import configure_logging

app = typer.Typer(
    name="compass-lab",
    help="Desk-scale MoE training, alignment, data-mixture, quantization and pipeline-planning lab.",
    no_args_is_help=True,
    pretty_exceptions_enable=False,
)


def include_router(parent: typer.Typer, router: typer.Typer) -> None:
    """Register a router's commands at the top level of ``parent``."""
    parent.registered_commands.extend(router.registered_commands)


@app.callback()
def main(
    ctx: typer.Context,
    config: Optional[Path] = typer.Option(None, "--config", help="JSON experiment config for the subcommand."),
    seed: int = typer.Option(settings.DEFAULT_SEED, min=0, help="Root seed of every random stream."),
    out: Path = typer.Option(Path(settings.OUTPUT_DIR), envvar="COMPASS_LAB_OUT", help="Run output directory."),
    jobs: int = typer.Option(settings.DEFAULT_JOBS, min=1, help="Worker processes for proxy sweeps."),
    log_level: Optional[str] = typer.Option(None, help="Logging level; COMPASS_LAB_LOG_LEVEL otherwise."),
):
    configure_logging(log_level)
    ctx.obj = RunContext(config_path=config, seed=seed, out=out, jobs=jobs)


include_router(app, pretrain_router)
include_router(app, sft_router)
include_router(app, align_router)
include_router(app, reward_router)
include_router(app, mixture_router)
include_router(app, quantize_router)
include_router(app, planner_router)
include_router(app, eval_router)
include_router(app, synthetic_router)
include_router(app, acceptance_router)
