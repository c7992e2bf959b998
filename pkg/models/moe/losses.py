# models/moe/losses.py
from typing import Tuple

import numpy as np

from core.tensor import Tensor
from models.moe.router import RouterDecision
from schemas.moe.schemas import MoEConfig
from utils.exceptions import LabErrorReason, require


def aux_loss(decision: RouterDecision) -> Tensor:
    """N * sum_i (p_i / B) * (c_i / (B K)); counts enter as constants."""
    n_tokens, top_k = decision.n_tokens, decision.top_k
    require(n_tokens > 0, LabErrorReason.EMPTY_INPUT, "aux loss over zero tokens")
    load = decision.counts.astype(decision.agg_prob.dtype) / (n_tokens * top_k)
    return (decision.agg_prob * load).sum() * (decision.n_experts / n_tokens)


def z_loss(logits: Tensor) -> Tensor:
    """(1/B) sum_j (log sum_i exp z_ij)^2"""
    require(logits.shape[0] >= 1, LabErrorReason.EMPTY_INPUT, "z-loss over zero tokens")
    lse = logits.logsumexp(axis=-1)
    return (lse * lse).mean()


def decayed(initial: float, floor: float, step: int, decay_steps: int) -> float:
    require(step >= 0, LabErrorReason.INVALID_ARGUMENT, "step must be non-negative", step=step)
    return max(floor, initial * (1.0 - step / decay_steps))


def loss_coefficients(step: int, config: MoEConfig) -> Tuple[float, float]:
    alpha = decayed(config.alpha0, config.alpha_floor, step, config.decay_steps)
    beta = decayed(config.beta0, config.beta_floor, step, config.decay_steps)
    return alpha, beta


def total_loss(l_lm: Tensor, l_aux: Tensor, l_z: Tensor, step: int, config: MoEConfig) -> Tensor:
    alpha, beta = loss_coefficients(step, config)
    return l_lm + l_aux * alpha + l_z * beta


def usage_entropy(counts: np.ndarray) -> float:
    """Shannon entropy (nats) of the expert dispatch distribution."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        return 0.0
    share = counts[counts > 0] / total
    return float(-(share * np.log(share)).sum())
