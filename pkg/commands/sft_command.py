# commands/sft_command.py
from typing import Optional

import typer

from commands.common import exit_on_error, finish, load_config, run_context
from core.prng import Prng
from models.moe.storage import model_or_fresh, save_model
from schemas.sft.schemas import SftRunConfig
from sft.dataset import encode_record, load_jsonl
from sft.packing import pack_samples
from sft.trainer import train_sft
from synthetic.generators import generate_sft_records
from utils.exceptions import LabErrorReason, require
from utils.reporting import write_csv

sft_router = typer.Typer()

COMMAND = "sft"


@sft_router.command(COMMAND)
def sft(
    ctx: typer.Context,
    data: Optional[str] = typer.Option(None, help="SFT records as JSON Lines; synthetic records when omitted."),
    checkpoint: Optional[str] = typer.Option(None, help="Saved model directory to fine-tune."),
    epochs: Optional[int] = typer.Option(None, min=1),
):
    """Supervised fine-tuning with per-domain loss masks over packed samples."""
    run = run_context(ctx)
    with exit_on_error(COMMAND):
        config = load_config(
            run, SftRunConfig, COMMAND, {"data_path": data, "checkpoint": checkpoint, "sft.epochs": epochs}
        )
        prng = Prng(run.seed)
        records = load_jsonl(config.data_path) if config.data_path else generate_sft_records(config.n_records, run.seed)
        samples = [encode_record(record) for record in records]
        require(len(samples) >= 1, LabErrorReason.EMPTY_INPUT, "no SFT records")
        model = model_or_fresh(config.checkpoint, config.model, prng.split(1))
        rows = train_sft(model, samples, config.sft, prng.split(2))

        out_dir = run.out_dir(COMMAND)
        write_csv(out_dir / "train_log.csv", rows, columns=["step", "epoch", "loss"])
        save_model(model, out_dir / "model")
        metrics = {
            "n_samples": len(samples),
            "n_packs": len(pack_samples(samples, config.sft.max_len)),
            "steps": len(rows),
            "final_loss": rows[-1]["loss"] if rows else float("nan"),
            "ecommerce_share": sum(s.domain == "ecommerce" for s in samples) / len(samples),
        }
        finish(run, COMMAND, config, metrics)
