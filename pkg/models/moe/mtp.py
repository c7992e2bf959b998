# models/moe/mtp.py
"""
Multi-token prediction heads.

Depth k reads the backbone's final hidden states through a stop-gradient,
runs them through k residual blocks and predicts the token k+1 positions ahead
with the shared embedding and final-norm gain, both also detached. The backbone
therefore never receives gradient from these losses, and the blocks receive
none from the main LM loss.
"""
from typing import List, Optional

import numpy as np

from core import functional as F
from core.tensor import Tensor
from models.moe.experts import GatedFFN
from utils.exceptions import LabErrorReason, require


class MtpBlock:
    def __init__(self, norm: Tensor, ffn: GatedFFN, eps: float):
        self.norm = norm
        self.ffn = ffn
        self.eps = eps

    def __call__(self, hidden: Tensor) -> Tensor:
        batch, length, width = hidden.shape
        normed = F.rms_norm(hidden, self.norm, self.eps).reshape(batch * length, width)
        return hidden + self.ffn(normed).reshape(batch, length, width)


def mtp_forward_and_loss(
    backbone_hidden: Tensor,
    tokens: np.ndarray,
    depth: int,
    blocks: List[MtpBlock],
    embedding: Tensor,
    final_gain: Tensor,
    eps: float,
    loss_mask: Optional[np.ndarray] = None,
    segment_positions: Optional[np.ndarray] = None,
) -> Tensor:
    """
    Cross-entropy of predicting tokens[:, t + 1 + depth] from position t.

    ``loss_mask`` is indexed by main-LM prediction position; the depth-k target at
    position t is the main target of position t + k and inherits its weight.
    With packed ``segment_positions``, a target whose source position sits in an
    earlier segment gets weight 0.
    """
    tokens = np.asarray(tokens)
    length = tokens.shape[1]
    require(1 <= depth <= len(blocks), LabErrorReason.INVALID_ARGUMENT, "MTP depth out of range", depth=depth)
    require(
        length >= depth + 2,
        LabErrorReason.SEQUENCE_TOO_SHORT,
        f"MTP depth {depth} needs at least {depth + 2} tokens",
        length=length,
    )
    hidden = backbone_hidden.detach()
    for block in blocks[:depth]:
        hidden = block(hidden)
    n_positions = length - 1 - depth
    normed = F.rms_norm(hidden[:, :n_positions], final_gain.detach(), eps)
    logits = normed @ embedding.detach().T
    flat_logits = logits.reshape(-1, logits.shape[-1])
    targets = tokens[:, 1 + depth:].reshape(-1)
    if loss_mask is None and segment_positions is None:
        return F.cross_entropy(flat_logits, targets)
    if loss_mask is None:
        loss_mask = np.ones(tokens.shape)
    weights = np.asarray(loss_mask, dtype=np.float64)[:, depth: depth + n_positions]
    if segment_positions is not None:
        weights = weights * (np.asarray(segment_positions)[:, depth: depth + n_positions] >= depth)
    weights = weights.reshape(-1)
    if weights.sum() <= 0:
        return Tensor(np.zeros((), dtype=flat_logits.dtype))
    return F.cross_entropy(flat_logits, targets, weights)
