# commands/eval_command.py
from typing import Optional

import numpy as np
import typer

from commands.common import exit_on_error, finish, load_config, run_context
from core.prng import Prng
from evaluation.report import build_eval_suites, eval_report, with_numerics, write_eval_report
from models.moe.storage import model_or_fresh
from schemas.evaluation.schemas import EVAL_COLUMNS, EvalRunConfig
from utils.reporting import print_table

eval_router = typer.Typer()

COMMAND = "eval"


@eval_router.command(COMMAND)
def evaluate(
    ctx: typer.Context,
    checkpoint: Optional[str] = typer.Option(None, help="Saved model directory; a fresh model when omitted."),
    numerics: Optional[str] = typer.Option(None, help="full, identity or e4m3."),
):
    """Per-slice loss and next-token accuracy on the language and SFT suites."""
    run = run_context(ctx)
    with exit_on_error(COMMAND):
        config = load_config(run, EvalRunConfig, COMMAND, {"checkpoint": checkpoint, "numerics": numerics})
        model = model_or_fresh(config.checkpoint, config.model, Prng(run.seed).split(1))
        model = with_numerics(model, config, run.seed)
        rows = eval_report(model, build_eval_suites(config, run.seed))
        write_eval_report(rows, run.out_dir(COMMAND) / "eval_report.csv")
        print_table("evaluation", [row.model_dump() for row in rows], EVAL_COLUMNS)
        metrics = {"n_slices": len(rows)}
        if rows:
            metrics["mean_loss"] = float(np.mean([row.loss for row in rows]))
            metrics["mean_accuracy"] = float(np.mean([row.accuracy for row in rows]))
        finish(run, COMMAND, config, metrics)
