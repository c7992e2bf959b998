# commands/pretrain_command.py
from pathlib import Path
from typing import Optional

import numpy as np
import typer

from commands.common import exit_on_error, finish, load_config, run_context
from core.prng import Prng
from mixture.corpus import build_proxy_corpus
from mixture.sweep import split_shards
from models.moe.storage import save_model
from models.moe.trainer import evaluate_loss, routing_entropy, train_lm
from models.moe.transformer import MoETransformer
from schemas.mixture.schemas import MixtureSpec
from schemas.moe.schemas import TRAIN_LOG_COLUMNS, PretrainRunConfig
from synthetic.generators import in_memory_shards
from utils.logger import get_logger
from utils.reporting import write_csv

logger = get_logger(__name__)

pretrain_router = typer.Typer()

COMMAND = "pretrain"


@pretrain_router.command(COMMAND)
def pretrain(
    ctx: typer.Context,
    steps: Optional[int] = typer.Option(None, min=0, help="Optimizer steps."),
    alpha0: Optional[float] = typer.Option(None, min=0.0, help="Initial load-balancing coefficient."),
    beta0: Optional[float] = typer.Option(None, min=0.0, help="Initial router z-loss coefficient."),
):
    """Pretrain the MoE transformer on a mixture of synthetic language shards."""
    run = run_context(ctx)
    with exit_on_error(COMMAND):
        config = load_config(
            run,
            PretrainRunConfig,
            COMMAND,
            {"pretrain.steps": steps, "model.alpha0": alpha0, "model.beta0": beta0},
        )
        prng = Prng(run.seed)
        train, heldout = split_shards(in_memory_shards(config.data, run.seed), config.heldout_fraction)
        weights = config.mixture or [1.0 / len(train)] * len(train)
        budget = sum(shard.tokens.size for shard in train)
        stream = build_proxy_corpus(MixtureSpec(weights=weights), budget, train, prng.split(0).generator())

        model = MoETransformer(config.model, prng.split(1))
        rows = train_lm(model, stream, config.pretrain, prng.split(2))
        out_dir = run.out_dir(COMMAND)
        write_csv(out_dir / "train_log.csv", rows, columns=TRAIN_LOG_COLUMNS)
        save_model(model, out_dir / "model")

        heldout_stream = np.concatenate([shard.tokens for shard in heldout])
        seq_len = config.pretrain.seq_len
        metrics = {
            "steps": len(rows),
            "final_L_LM": rows[-1]["L_LM"] if rows else float("nan"),
            "heldout_loss": evaluate_loss(model, heldout_stream, seq_len, config.eval_windows),
            "routing_entropy": routing_entropy(model, heldout_stream, seq_len, config.eval_windows),
        }
        finish(run, COMMAND, config, metrics)
        logger.info("model saved to %s", Path(out_dir) / "model")
