# models/moe/router.py
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from core import functional as F
from core.tensor import Tensor
from utils.exceptions import LabErrorReason, require

Project = Callable[[Tensor, Tensor], Tensor]


@dataclass
class RouterDecision:
    """Routing record for one batch of B tokens over N experts."""

    logits: Tensor
    probs: Tensor
    topk_idx: np.ndarray
    combine_weights: Tensor
    counts: np.ndarray
    agg_prob: Tensor
    n_tokens: int
    top_k: int

    @property
    def n_experts(self) -> int:
        return self.probs.shape[-1]

    def load(self) -> np.ndarray:
        """Fraction of the B*K dispatches each expert received."""
        return self.counts / float(self.n_tokens * self.top_k)


def decide(logits: Tensor, top_k: int) -> RouterDecision:
    """Every token goes to its top-K experts; nothing is dropped for capacity."""
    n_tokens, n_experts = logits.shape
    require(n_tokens >= 1, LabErrorReason.EMPTY_INPUT, "cannot route an empty batch")
    probs = F.softmax_rows(logits)
    topk_idx, _ = F.top_k(probs.data, top_k)
    rows = np.arange(n_tokens)[:, None]
    selected = probs[rows, topk_idx]
    combine = selected / selected.sum(axis=-1, keepdims=True)
    counts = np.bincount(topk_idx.reshape(-1), minlength=n_experts).astype(np.int64)
    return RouterDecision(
        logits=logits,
        probs=probs,
        topk_idx=topk_idx,
        combine_weights=combine,
        counts=counts,
        agg_prob=probs.sum(axis=0),
        n_tokens=n_tokens,
        top_k=top_k,
    )


def route_tokens(
    hidden: Tensor,
    router_weights: Tensor,
    top_k: int,
    project: Optional[Project] = None,
) -> RouterDecision:
    require(hidden.ndim == 2, LabErrorReason.SHAPE_MISMATCH, "router expects [B x d_model]", shape=list(hidden.shape))
    logits = project(hidden, router_weights) if project is not None else hidden @ router_weights
    return decide(logits, top_k)
