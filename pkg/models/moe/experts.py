# models/moe/experts.py
from typing import Callable, List, Optional, Sequence

import numpy as np

from core.tensor import Tensor, scatter_rows
from models.moe.router import RouterDecision
from utils.instrumentation import Counters

# (activations, weight, gemm name) -> activations @ weight, possibly observed or quantized
Gemm = Callable[[Tensor, Tensor, str], Tensor]


def _plain_gemm(x: Tensor, weight: Tensor, name: str) -> Tensor:
    return x @ weight


class GatedFFN:
    """silu(x W_gate) * (x W_up) W_down, with W_gate and W_up stored side by side in w_in."""

    def __init__(self, w_in: Tensor, w_out: Tensor, prefix: str):
        self.w_in = w_in
        self.w_out = w_out
        self.prefix = prefix

    @property
    def d_ff(self) -> int:
        return self.w_out.shape[0]

    def __call__(self, x: Tensor, gemm: Gemm = _plain_gemm) -> Tensor:
        hidden = gemm(x, self.w_in, f"{self.prefix}.w_in")
        gate = hidden[:, : self.d_ff]
        up = hidden[:, self.d_ff:]
        return gemm(gate.silu() * up, self.w_out, f"{self.prefix}.w_out")


def moe_forward(
    hidden: Tensor,
    decision: RouterDecision,
    experts: Sequence[GatedFFN],
    gemm: Gemm = _plain_gemm,
    counters: Optional[Counters] = None,
) -> Tensor:
    """
    Sparse dispatch: each expert runs only on the tokens routed to it and its
    output is scattered back weighted by the token's combine weight.
    """
    n_tokens = hidden.shape[0]
    out = None
    for index, expert in enumerate(experts):
        rows, slots = np.nonzero(decision.topk_idx == index)
        if rows.size == 0:
            continue
        if counters is not None:
            counters.increment("expert_dispatch", rows.size)
        weights = decision.combine_weights[rows, slots].reshape(-1, 1)
        contribution = scatter_rows(expert(hidden[rows], gemm) * weights, rows, n_tokens)
        out = contribution if out is None else out + contribution
    return out


def dense_moe_forward(hidden: Tensor, decision: RouterDecision, experts: Sequence[GatedFFN]) -> Tensor:
    """Reference path: every expert on every token, weighted by a dense [B x N] gate with zeros off the top-K."""
    n_tokens = hidden.shape[0]
    gate = np.zeros((n_tokens, len(experts)), dtype=hidden.dtype)
    rows = np.arange(n_tokens)[:, None]
    gate[rows, decision.topk_idx] = decision.combine_weights.data
    out = None
    for index, expert in enumerate(experts):
        contribution = expert(hidden) * gate[:, index: index + 1]
        out = contribution if out is None else out + contribution
    return out


def make_experts(w_in: List[Tensor], w_out: List[Tensor], prefix: str) -> List[GatedFFN]:
    return [GatedFFN(a, b, f"{prefix}.{i}") for i, (a, b) in enumerate(zip(w_in, w_out))]
