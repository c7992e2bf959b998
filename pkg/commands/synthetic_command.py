# commands/synthetic_command.py
from typing import Optional

import typer

from commands.common import exit_on_error, finish, load_config, run_context
from schemas.synthetic.schemas import SyntheticConfig
from synthetic.generators import gen_synthetic

synthetic_router = typer.Typer()

COMMAND = "gen-synthetic"


@synthetic_router.command(COMMAND)
def generate(
    ctx: typer.Context,
    n_shards: Optional[int] = typer.Option(None, min=1),
    n_tokens: Optional[int] = typer.Option(None, min=1, help="Tokens per shard."),
):
    """Write synthetic language shards, their manifest and SFT records under <out>/gen-synthetic/data."""
    run = run_context(ctx)
    with exit_on_error(COMMAND):
        config = load_config(run, SyntheticConfig, COMMAND, {"n_shards": n_shards, "n_tokens": n_tokens})
        stats = gen_synthetic(config, run.seed, run.out_dir(COMMAND) / "data")
        finish(run, COMMAND, config, stats)
