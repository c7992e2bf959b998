# commands/mixture_command.py
from typing import Optional

import typer

from commands.common import exit_on_error, finish, load_config, run_context
from mixture.corpus import load_shards
from mixture.search import run_mixture_search, write_search_artifacts
from schemas.mixture.schemas import MixtureSearchRunConfig
from synthetic.generators import in_memory_shards
from utils.reporting import print_table

mixture_router = typer.Typer()

COMMAND = "mixture-search"


@mixture_router.command(COMMAND)
def mixture_search(
    ctx: typer.Context,
    n_mixtures: Optional[int] = typer.Option(None, min=1, help="Proxy runs in the sweep."),
    regressor: Optional[str] = typer.Option(None, help="stumps or ridge."),
    manifest: Optional[str] = typer.Option(None, help="Shard manifest written by gen-synthetic."),
):
    """Proxy sweep over data mixtures, regression and selection of the best predicted mixture."""
    run = run_context(ctx)
    with exit_on_error(COMMAND):
        config = load_config(
            run,
            MixtureSearchRunConfig,
            COMMAND,
            {"sweep.n_mixtures": n_mixtures, "sweep.regressor": regressor, "manifest": manifest},
        )
        shards = load_shards(config.manifest) if config.manifest else in_memory_shards(config.data, run.seed)
        result = run_mixture_search(config.sweep, shards, run.seed, run.jobs)
        write_search_artifacts(result, run.out_dir(COMMAND))
        print_table(
            "screening",
            [entry.model_dump() for entry in result.screening.entries],
            ["name", "pearson", "spearman", "retained"],
        )
        finish(run, COMMAND, config, result.metrics())
