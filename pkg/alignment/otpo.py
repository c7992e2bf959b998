# alignment/otpo.py
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from alignment.cache import RefLogProbCache, reference_log_probs
from alignment.sinkhorn import otpo_weights
from core.optim import AdamW
from core.prng import Prng
from core.tensor import Tensor, backward
from models.moe.transformer import MoETransformer
from schemas.alignment.schemas import AlignConfig, PreferencePair, TokenWeights
from utils.exceptions import LabErrorReason, require
from utils.logger import get_logger

logger = get_logger(__name__)


@dataclass
class PolicyPass:
    """Policy log-probabilities and hidden states of both responses of a pair."""

    logps_c: Tensor
    logps_r: Tensor
    hidden_c: np.ndarray
    hidden_r: np.ndarray


def policy_pass(policy: MoETransformer, pair: PreferencePair) -> PolicyPass:
    start = len(pair.prompt)
    logps_c, hidden_c = policy.response_forward(pair.prompt + pair.chosen, start)
    logps_r, hidden_r = policy.response_forward(pair.prompt + pair.rejected, start)
    return PolicyPass(logps_c, logps_r, hidden_c, hidden_r)


def weighted_dpo_loss(
    logps_c: Tensor,
    logps_r: Tensor,
    ref_c: np.ndarray,
    ref_r: np.ndarray,
    weights: TokenWeights,
    beta_dpo: float,
) -> Tensor:
    """
    -log sigmoid(beta * (<w_c, delta_c> - <w_r, delta_r>)) with
    delta = log pi_theta - log pi_ref per token. Evaluated in float64; the weights
    are constants.
    """
    require(
        weights.w_c.shape == logps_c.shape and weights.w_r.shape == logps_r.shape,
        LabErrorReason.SHAPE_MISMATCH,
        "token weights do not match the response lengths",
    )
    delta_c = logps_c.astype(np.float64) - np.asarray(ref_c, dtype=np.float64)
    delta_r = logps_r.astype(np.float64) - np.asarray(ref_r, dtype=np.float64)
    margin = (delta_c * weights.w_c).sum() - (delta_r * weights.w_r).sum()
    return (-(margin * beta_dpo)).softplus()


def mean_token_dpo_loss(
    logps_c: Tensor,
    logps_r: Tensor,
    ref_c: np.ndarray,
    ref_r: np.ndarray,
    beta_dpo: float,
) -> Tensor:
    """Token-level DPO with each response's log-ratio averaged over its length."""
    delta_c = logps_c.astype(np.float64) - np.asarray(ref_c, dtype=np.float64)
    delta_r = logps_r.astype(np.float64) - np.asarray(ref_r, dtype=np.float64)
    return (-((delta_c.mean() - delta_r.mean()) * beta_dpo)).softplus()


def otpo_loss(
    pair: PreferencePair,
    policy: MoETransformer,
    cache: RefLogProbCache,
    weights: TokenWeights,
    beta_dpo: float,
) -> Tensor:
    current = policy_pass(policy, pair)
    ref_c = cache.get(pair.prompt, pair.chosen)
    ref_r = cache.get(pair.prompt, pair.rejected)
    return weighted_dpo_loss(current.logps_c, current.logps_r, ref_c, ref_r, weights, beta_dpo)


def pair_weights(current: PolicyPass, config: AlignConfig) -> TokenWeights:
    if not config.otpo:
        return TokenWeights.uniform(len(current.hidden_c), len(current.hidden_r))
    return otpo_weights(
        current.hidden_c,
        current.hidden_r,
        config.epsilon,
        rho=config.rho,
        max_iter=config.sinkhorn_max_iter,
        tol=config.sinkhorn_tol,
    )


def train_alignment(
    policy: MoETransformer,
    pairs: Sequence[PreferencePair],
    config: AlignConfig,
    prng: Prng,
    cache: Optional[RefLogProbCache] = None,
    reference: Optional[MoETransformer] = None,
) -> List[Dict[str, float]]:
    """
    Preference optimisation over ``pairs``.

    With ``config.cached_reference`` the reference log-probabilities come only
    from ``cache`` (a miss is an error); otherwise ``reference`` is run on both
    responses at every step.
    """
    require(len(pairs) >= 1, LabErrorReason.EMPTY_INPUT, "no preference pairs")
    if config.cached_reference:
        require(cache is not None, LabErrorReason.CONFIG_ERROR, "cached reference mode needs a cache")
    else:
        require(reference is not None, LabErrorReason.CONFIG_ERROR, "online reference mode needs a reference model")
    optimizer = AdamW(policy.parameters(), lr=config.lr, weight_decay=config.weight_decay, max_grad_norm=1.0)
    order = prng.generator().permutation(len(pairs))
    rows = []
    for step in range(config.steps):
        pair = pairs[int(order[step % len(pairs)])]
        current = policy_pass(policy, pair)
        if config.cached_reference:
            ref_c = cache.get(pair.prompt, pair.chosen)
            ref_r = cache.get(pair.prompt, pair.rejected)
        else:
            ref_c = reference_log_probs(reference, pair.prompt, pair.chosen)
            ref_r = reference_log_probs(reference, pair.prompt, pair.rejected)
        weights = pair_weights(current, config)
        loss = weighted_dpo_loss(current.logps_c, current.logps_r, ref_c, ref_r, weights, config.beta_dpo)
        optimizer.zero_grad()
        backward(loss, params=optimizer.params)
        optimizer.step()
        rows.append({"step": step, "loss": loss.item()})
        if step % config.log_every == 0:
            logger.info("align step %d loss=%.5f", step, loss.item())
    return rows


def forwards_per_response(
    policy: MoETransformer,
    reference: Optional[MoETransformer],
    n_responses: int,
) -> float:
    """Model forwards (policy and reference) spent per response scored during training."""
    total = policy.counters["forward"] + (reference.counters["forward"] if reference is not None else 0)
    return total / max(n_responses, 1)
