# models/moe/trainer.py
from typing import Dict, List, Optional

import numpy as np

from core.optim import AdamW
from core.prng import Prng
from core.tensor import backward, no_grad
from models.moe.losses import loss_coefficients, usage_entropy
from models.moe.transformer import MoETransformer
from schemas.moe.schemas import PretrainConfig
from utils.exceptions import LabErrorReason, require
from utils.logger import get_logger

logger = get_logger(__name__)


def sample_windows(stream: np.ndarray, batch_size: int, seq_len: int, rng: np.random.Generator) -> np.ndarray:
    stream = np.asarray(stream, dtype=np.int64)
    require(
        stream.size >= seq_len,
        LabErrorReason.SEQUENCE_TOO_SHORT,
        f"token stream of {stream.size} is shorter than seq_len={seq_len}",
    )
    starts = rng.integers(0, stream.size - seq_len + 1, size=batch_size)
    return np.stack([stream[s: s + seq_len] for s in starts])


def make_optimizer(model: MoETransformer, config: PretrainConfig) -> AdamW:
    return AdamW(
        model.parameters(),
        lr=config.lr,
        weight_decay=config.weight_decay,
        max_grad_norm=config.max_grad_norm,
    )


def train_lm(
    model: MoETransformer,
    stream: np.ndarray,
    config: PretrainConfig,
    prng: Prng,
    optimizer: Optional[AdamW] = None,
) -> List[Dict[str, float]]:
    """Next-token pretraining on random windows of ``stream``; returns one log row per step."""
    rng = prng.generator()
    optimizer = optimizer or make_optimizer(model, config)
    rows: List[Dict[str, float]] = []
    for step in range(config.steps):
        batch = sample_windows(stream, config.batch_size, config.seq_len, rng)
        output = model.lm_forward(batch, step=step)
        optimizer.zero_grad()
        backward(output.L_total, params=optimizer.params)
        optimizer.step()

        counts = sum(d.counts for d in output.decisions.values()) if output.decisions else np.zeros(1)
        alpha, beta = loss_coefficients(step, model.config)
        scalars = output.scalars()
        row = {
            "step": step,
            "L_LM": scalars["L_LM"],
            "L_aux": scalars["L_aux"],
            "L_Z": scalars["L_Z"],
            "L_MTP": scalars["L_MTP"],
            "alpha": alpha,
            "beta": beta,
            "expert_usage_entropy": usage_entropy(counts),
        }
        rows.append(row)
        if step % config.log_every == 0 or step == config.steps - 1:
            logger.info(
                "step %d L_LM=%.4f L_aux=%.4f L_Z=%.4f entropy=%.3f",
                step, row["L_LM"], row["L_aux"], row["L_Z"], row["expert_usage_entropy"],
            )
        else:
            logger.debug("step %d L_total=%.4f", step, scalars["L_total"])
    return rows


def evaluate_loss(model: MoETransformer, stream: np.ndarray, seq_len: int, max_windows: int = 64) -> float:
    """Mean next-token loss over consecutive non-overlapping windows of ``stream``."""
    stream = np.asarray(stream, dtype=np.int64)
    n_windows = min(max_windows, stream.size // seq_len)
    require(n_windows >= 1, LabErrorReason.SEQUENCE_TOO_SHORT, "evaluation stream shorter than one window")
    batch = stream[: n_windows * seq_len].reshape(n_windows, seq_len)
    with no_grad():
        return model.lm_forward(batch).L_LM.item()


def routing_entropy(model: MoETransformer, stream: np.ndarray, seq_len: int, max_windows: int = 16) -> float:
    """Expert usage entropy over held-out windows, summed over MoE layers."""
    stream = np.asarray(stream, dtype=np.int64)
    n_windows = min(max_windows, stream.size // seq_len)
    require(n_windows >= 1, LabErrorReason.SEQUENCE_TOO_SHORT, "stream shorter than one window")
    batch = stream[: n_windows * seq_len].reshape(n_windows, seq_len)
    with no_grad():
        _, decisions = model.hidden_states(batch)
    if not decisions:
        return 0.0
    return usage_entropy(sum(d.counts for d in decisions.values()))
