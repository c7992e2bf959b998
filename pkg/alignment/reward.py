# alignment/reward.py
from typing import Dict, List, Sequence, Tuple

import numpy as np

from core.optim import AdamW
from core.prng import Prng
from core.tensor import Tensor, backward, no_grad
from models.reward.reward_model import RewardModel
from schemas.alignment.schemas import PreferencePair, RewardConfig
from utils.exceptions import LabErrorReason, require
from utils.logger import get_logger

logger = get_logger(__name__)


def rm_loss(r_chosen: Tensor, r_rejected: Tensor, margin: float) -> Tensor:
    """-log sigmoid(r_c - r_r - m)"""
    require(margin >= 0, LabErrorReason.INVALID_ARGUMENT, "margin must be non-negative", margin=margin)
    return (-(r_chosen - r_rejected - margin)).softplus()


def semantic_deviation(model: RewardModel, pair: PreferencePair) -> float:
    """1 - cosine similarity of the mean-pooled backbone states of chosen and rejected."""
    with no_grad():
        chosen = model.backbone.pooled(np.asarray(pair.prompt + pair.chosen)[None, :]).data.reshape(-1)
        rejected = model.backbone.pooled(np.asarray(pair.prompt + pair.rejected)[None, :]).data.reshape(-1)
    chosen = chosen.astype(np.float64)
    rejected = rejected.astype(np.float64)
    denom = np.linalg.norm(chosen) * np.linalg.norm(rejected)
    if denom == 0:
        return 0.0
    return float(1.0 - chosen @ rejected / denom)


def order_pairs(model: RewardModel, pairs: Sequence[PreferencePair], order: str, prng: Prng) -> List[int]:
    """
    Visiting order of the training pairs.

    curriculum: descending semantic deviation, so the most clearly separated pairs
    come first; stable on ties. input: as given. shuffled: seeded permutation.
    """
    if order == "input":
        return list(range(len(pairs)))
    if order == "shuffled":
        return [int(i) for i in prng.generator().permutation(len(pairs))]
    deviations = np.array([semantic_deviation(model, pair) for pair in pairs])
    return [int(i) for i in np.argsort(-deviations, kind="stable")]


def pair_rewards(model: RewardModel, pair: PreferencePair) -> Tuple[Tensor, Tensor]:
    return model.reward(pair.prompt + pair.chosen), model.reward(pair.prompt + pair.rejected)


def pairwise_accuracy(model: RewardModel, pairs: Sequence[PreferencePair]) -> float:
    if not pairs:
        return 0.0
    wins = sum(model.score(p.prompt + p.chosen) > model.score(p.prompt + p.rejected) for p in pairs)
    return wins / len(pairs)


def rm_train(
    model: RewardModel,
    pairs: Sequence[PreferencePair],
    config: RewardConfig,
    prng: Prng,
) -> Tuple[RewardModel, List[Dict[str, float]]]:
    """Margin Bradley-Terry training from a zeroed head, pairs in the configured order every epoch."""
    require(config.margin >= 0, LabErrorReason.INVALID_ARGUMENT, "margin must be non-negative")
    require(len(pairs) >= 1, LabErrorReason.EMPTY_INPUT, "no preference pairs to train on")
    model.reinit_head()
    visit = order_pairs(model, pairs, config.order, prng)
    optimizer = AdamW(model.parameters(), lr=config.lr, weight_decay=config.weight_decay, max_grad_norm=1.0)
    rows = []
    step = 0
    for epoch in range(config.epochs):
        for begin in range(0, len(visit), config.batch_size):
            batch = [pairs[i] for i in visit[begin: begin + config.batch_size]]
            loss = None
            for pair in batch:
                r_chosen, r_rejected = pair_rewards(model, pair)
                term = rm_loss(r_chosen, r_rejected, config.margin)
                loss = term if loss is None else loss + term
            loss = loss * (1.0 / len(batch))
            optimizer.zero_grad()
            backward(loss, params=optimizer.params)
            optimizer.step()
            rows.append({"step": step, "epoch": epoch, "loss": loss.item()})
            if step % config.log_every == 0:
                logger.info("rm step %d epoch %d loss=%.4f", step, epoch, loss.item())
            step += 1
    return model, rows
