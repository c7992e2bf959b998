# models/reward/reward_model.py
from typing import Dict, List, Sequence

import numpy as np

from core.tensor import Tensor, no_grad, parameter
from models.moe.transformer import MoETransformer


class RewardModel:
    """Scalar reward: a linear head on the mean-pooled final hidden state of a transformer backbone."""

    def __init__(self, backbone: MoETransformer):
        self.backbone = backbone
        width = backbone.config.d_model
        self.head_w = parameter(np.zeros(width), name="head.w", dtype=backbone.dtype)
        self.head_b = parameter(np.zeros(()), name="head.b", dtype=backbone.dtype)

    def reinit_head(self) -> None:
        """Zero the head regardless of where the backbone came from."""
        self.head_w = parameter(np.zeros_like(self.head_w.data), name="head.w", dtype=self.backbone.dtype)
        self.head_b = parameter(np.zeros_like(self.head_b.data), name="head.b", dtype=self.backbone.dtype)

    def parameters(self) -> List[Tensor]:
        return self.backbone.parameters() + [self.head_w, self.head_b]

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {f"backbone.{k}": v for k, v in self.backbone.state_dict().items()}
        state["head.w"] = self.head_w.data.copy()
        state["head.b"] = self.head_b.data.reshape(1).copy()
        return state

    def reward(self, tokens: Sequence[int]) -> Tensor:
        pooled = self.backbone.pooled(np.asarray(tokens)[None, :])
        return (pooled.reshape(-1) * self.head_w).sum() + self.head_b

    def score(self, tokens: Sequence[int]) -> float:
        with no_grad():
            return self.reward(tokens).item()

    def __call__(self, prompt: Sequence[int], response: Sequence[int]) -> float:
        return self.score(list(prompt) + list(response))
