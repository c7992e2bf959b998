# sft/trainer.py
from typing import Dict, List, Sequence

import numpy as np

from core.optim import AdamW
from core.prng import Prng
from core.tensor import backward
from models.moe.transformer import MoETransformer
from schemas.sft.schemas import PackedBatch, SftConfig, SftSample
from sft.masks import build_attention_mask
from sft.packing import pack_samples
from utils.exceptions import LabErrorReason, require
from utils.logger import get_logger

logger = get_logger(__name__)


def stack_packs(packs: Sequence[PackedBatch]) -> Dict[str, np.ndarray]:
    return {
        "tokens": np.stack([p.tokens for p in packs]),
        "attn_mask": np.stack([build_attention_mask(p) for p in packs]),
        "positions": np.stack([p.positions for p in packs]),
        "loss_mask": np.stack([p.loss_mask for p in packs]),
    }


def sft_step(batch: Sequence[PackedBatch], model: MoETransformer, optimizer: AdamW, step: int = 0) -> float:
    """
    One update on packed sequences. The returned loss is the masked mean
    cross-entropy; routing and MTP terms are added to the objective the
    gradient is taken of.
    """
    arrays = stack_packs(batch)
    require(arrays["loss_mask"].sum() > 0, LabErrorReason.EMPTY_INPUT, "batch has no loss positions")
    output = model.lm_forward(
        arrays["tokens"],
        attn_mask=arrays["attn_mask"],
        positions=arrays["positions"],
        loss_mask=arrays["loss_mask"],
        step=step,
    )
    optimizer.zero_grad()
    backward(output.L_total, params=optimizer.params)
    optimizer.step()
    return output.L_LM.item()


def train_sft(
    model: MoETransformer,
    samples: Sequence[SftSample],
    config: SftConfig,
    prng: Prng,
) -> List[Dict[str, float]]:
    packs = pack_samples(samples, config.max_len)
    logger.info("packed %d samples into %d packs of %d", len(samples), len(packs), config.max_len)
    optimizer = AdamW(
        model.parameters(),
        lr=config.lr,
        weight_decay=config.weight_decay,
        max_grad_norm=config.max_grad_norm,
    )
    rng = prng.generator()
    rows = []
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(packs))
        for begin in range(0, len(order), config.packs_per_step):
            batch = [packs[i] for i in order[begin: begin + config.packs_per_step]]
            if sum(int(p.loss_mask.sum()) for p in batch) == 0:
                continue
            loss = sft_step(batch, model, optimizer, step=step)
            rows.append({"step": step, "epoch": epoch, "loss": loss})
            if step % config.log_every == 0:
                logger.info("sft step %d epoch %d loss=%.4f", step, epoch, loss)
            step += 1
    return rows
