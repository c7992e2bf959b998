# core/optim.py
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from core.tensor import Tensor


@dataclass
class AdamWState:
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)


def init_state(params: Sequence[Tensor]) -> AdamWState:
    return AdamWState(
        step=0,
        m=[np.zeros_like(p.data) for p in params],
        v=[np.zeros_like(p.data) for p in params],
    )


def adamw_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray],
    state: AdamWState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> Sequence[Tensor]:
    """
    One AdamW update in place, with decoupled weight decay:
    theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
    """
    state.step += 1
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step
    for i, (param, grad) in enumerate(zip(params, grads)):
        m = state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grad
        v = state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        update = m_hat / (np.sqrt(v_hat) + eps) + weight_decay * param.data
        param.data = (param.data - lr * update).astype(param.data.dtype, copy=False)
    return params


class AdamW:
    """Stateful wrapper reading ``grad`` off each parameter."""

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 1e-3,
        betas=(0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
        max_grad_norm: Optional[float] = None,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.max_grad_norm = max_grad_norm
        self.state = init_state(self.params)

    def zero_grad(self) -> None:
        for param in self.params:
            param.grad = np.zeros_like(param.data)

    def grads(self) -> List[np.ndarray]:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        if self.max_grad_norm is not None:
            norm = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads)))
            if norm > self.max_grad_norm:
                factor = self.max_grad_norm / norm
                grads = [(g * factor).astype(g.dtype) for g in grads]
        return grads

    def step(self) -> None:
        adamw_step(
            self.params,
            self.grads(),
            self.state,
            self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            weight_decay=self.weight_decay,
        )
