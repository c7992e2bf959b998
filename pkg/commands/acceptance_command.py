# commands/acceptance_command.py
from typing import Optional

import typer

from acceptance.suite import acceptance_metrics, acceptance_rows, run_acceptance, write_acceptance
from commands.common import exit_on_error, finish, load_config, run_context
from schemas.acceptance.schemas import ACCEPTANCE_COLUMNS, AcceptanceConfig
from utils.exceptions import LabError, LabErrorReason
from utils.reporting import print_table

acceptance_router = typer.Typer()

COMMAND = "acceptance"


def parse_criteria(value: Optional[str]) -> Optional[list]:
    if not value:
        return None
    try:
        return [int(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise LabError(LabErrorReason.CONFIG_ERROR, f"--criteria expects comma-separated ids, got {value!r}")


@acceptance_router.command(COMMAND)
def acceptance(
    ctx: typer.Context,
    quick: bool = typer.Option(False, "--quick", help="Scaled-down step and case counts."),
    criteria: Optional[str] = typer.Option(None, help="Comma-separated criterion ids, e.g. 1,3,7."),
):
    """Run the release checks; exits 1 when any selected criterion fails."""
    run = run_context(ctx)
    with exit_on_error(COMMAND):
        config = load_config(run, AcceptanceConfig, COMMAND, {"criteria": parse_criteria(criteria)})
        results = run_acceptance(config, run.seed, quick=quick, jobs=run.jobs)
        write_acceptance(results, run.out_dir(COMMAND) / "acceptance.csv")
        print_table("acceptance", acceptance_rows(results), ACCEPTANCE_COLUMNS)
        finish(run, COMMAND, config, acceptance_metrics(results))
        failed = [result.criterion for result in results if not result.passed]
        if failed:
            raise LabError(LabErrorReason.VALIDATION_FAILED, f"criteria {failed} failed", criteria=failed)
