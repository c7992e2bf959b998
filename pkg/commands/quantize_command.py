# commands/quantize_command.py
from typing import Optional

import typer

from commands.common import exit_on_error, finish, load_config, run_context
from quantization.experiment import run_quantize_experiment
from quantization.quantize import save_scheme
from quantization.report import write_report
from schemas.quantization.schemas import QuantizeConfig
from utils.reporting import print_table, write_csv

quantize_router = typer.Typer()

COMMAND = "quantize"


@quantize_router.command(COMMAND)
def quantize(
    ctx: typer.Context,
    tau: Optional[int] = typer.Option(None, min=1, help="Minimum calibration tokens per expert."),
    alpha: Optional[float] = typer.Option(None, min=0.0, max=1.0, help="Smoothing migration strength."),
    metric: Optional[str] = typer.Option(None, help="output_mse or accuracy."),
    model: Optional[str] = typer.Option(None, help="skewed or trained."),
):
    """Naive against expert-aware FP8 quantization, compared per evaluation slice."""
    run = run_context(ctx)
    with exit_on_error(COMMAND):
        config = load_config(
            run, QuantizeConfig, COMMAND, {"tau": tau, "alpha": alpha, "metric": metric, "model": model}
        )
        experiment = run_quantize_experiment(config, run.seed)
        out_dir = run.out_dir(COMMAND)
        write_report(experiment.naive_report, out_dir / "report_naive.csv")
        write_report(experiment.aware_report, out_dir / "report_expert_aware.csv")
        comparison = experiment.comparison_rows()
        write_csv(out_dir / "comparison.csv", comparison, columns=["slice", "metric", "naive_delta", "aware_delta"])
        save_scheme(experiment.aware.scheme, out_dir / "scheme")
        print_table("naive vs expert-aware", comparison, ["slice", "metric", "naive_delta", "aware_delta"])
        finish(run, COMMAND, config, experiment.metrics())
