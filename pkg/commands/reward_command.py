# commands/reward_command.py
import math
from typing import Optional

import typer

from alignment.dataset import load_preferences
from alignment.reward import pairwise_accuracy, rm_train
from commands.common import exit_on_error, finish, load_config, run_context
from core.checkpoint import save_checkpoint
from core.prng import Prng
from models.moe.storage import model_or_fresh
from models.reward.reward_model import RewardModel
from schemas.alignment.schemas import RewardRunConfig
from synthetic.generators import separable_preferences
from utils.exceptions import LabErrorReason, require
from utils.reporting import write_csv

reward_router = typer.Typer()

COMMAND = "rm-train"


@reward_router.command(COMMAND)
def rm_train_command(
    ctx: typer.Context,
    margin: Optional[float] = typer.Option(None, help="Bradley-Terry margin, >= 0."),
    order: Optional[str] = typer.Option(None, help="curriculum, input or shuffled."),
    epochs: Optional[int] = typer.Option(None, min=1),
    checkpoint: Optional[str] = typer.Option(None, help="Saved model directory used as the backbone."),
    preferences: Optional[str] = typer.Option(None, help="Preference records as JSON Lines."),
):
    """Train the margin reward model and report held-out pairwise accuracy."""
    run = run_context(ctx)
    with exit_on_error(COMMAND):
        config = load_config(
            run,
            RewardRunConfig,
            COMMAND,
            {
                "reward.margin": margin,
                "reward.order": order,
                "reward.epochs": epochs,
                "checkpoint": checkpoint,
                "preferences_path": preferences,
            },
        )
        prng = Prng(run.seed)
        if config.preferences_path:
            pairs = load_preferences(config.preferences_path)
        else:
            pairs = separable_preferences(config.n_pairs, run.seed)
        n_train = int(len(pairs) * (1.0 - config.heldout_fraction))
        require(
            0 < n_train < len(pairs),
            LabErrorReason.EMPTY_INPUT,
            f"{len(pairs)} pairs cannot be split with heldout_fraction={config.heldout_fraction}",
        )
        train, heldout = pairs[:n_train], pairs[n_train:]

        model = RewardModel(model_or_fresh(config.checkpoint, config.model, prng.split(1), name="reward"))
        model, rows = rm_train(model, train, config.reward, prng.split(2))

        out_dir = run.out_dir(COMMAND)
        write_csv(out_dir / "train_log.csv", rows, columns=["step", "epoch", "loss"])
        save_checkpoint(out_dir / "reward_model.bin", model.state_dict())
        metrics = {
            "n_train": len(train),
            "n_heldout": len(heldout),
            "initial_loss": rows[0]["loss"],
            "initial_loss_expected": math.log1p(math.exp(config.reward.margin)),
            "final_loss": rows[-1]["loss"],
            "train_accuracy": pairwise_accuracy(model, train),
            "heldout_accuracy": pairwise_accuracy(model, heldout),
        }
        finish(run, COMMAND, config, metrics)
