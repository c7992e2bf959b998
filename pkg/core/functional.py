# core/functional.py
from typing import Optional, Tuple

import numpy as np

from core.tensor import Tensor, concat, scatter_rows
from utils.exceptions import LabErrorReason, require

__all__ = [
    "softmax_rows",
    "log_softmax",
    "logsumexp",
    "rms_norm",
    "top_k",
    "cross_entropy",
    "token_log_probs",
    "silu",
    "softplus",
    "scatter_rows",
    "concat",
]


def softmax_rows(x: Tensor) -> Tensor:
    require(x.shape[-1] >= 1, LabErrorReason.SHAPE_MISMATCH, "softmax needs at least one column")
    return x.softmax()


def log_softmax(x: Tensor) -> Tensor:
    return x.log_softmax()


def logsumexp(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    return x.logsumexp(axis=axis, keepdims=keepdims)


def silu(x: Tensor) -> Tensor:
    return x.silu()


def softplus(x: Tensor) -> Tensor:
    return x.softplus()


def rms_norm(x: Tensor, gain: Tensor, eps: float = 1e-6) -> Tensor:
    """x / sqrt(mean(x^2) + eps) * gain over the trailing axis."""
    require(eps > 0, LabErrorReason.INVALID_ARGUMENT, "rms_norm eps must be positive", eps=eps)
    mean_square = (x * x).mean(axis=-1, keepdims=True)
    return x * (mean_square + eps) ** -0.5 * gain


def top_k(x: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Indices and values of the k largest entries of a vector, largest first.

    Equal values keep ascending index order, so the lowest index wins a tie.
    """
    x = np.asarray(x)
    n = x.shape[-1]
    require(1 <= k <= n, LabErrorReason.INVALID_ARGUMENT, f"top_k needs 1 <= k <= {n}", k=k, n=n)
    order = np.argsort(-x, axis=-1, kind="stable")[..., :k]
    return order, np.take_along_axis(x, order, axis=-1)


def token_log_probs(logits: Tensor, targets: np.ndarray) -> Tensor:
    """log softmax(logits)[i, targets[i]] for every row i."""
    targets = np.asarray(targets, dtype=np.int64)
    rows = np.arange(targets.shape[0])
    return logits.log_softmax()[rows, targets]


def cross_entropy(logits: Tensor, targets: np.ndarray, weights: Optional[np.ndarray] = None) -> Tensor:
    """
    Mean negative log-likelihood of ``targets`` under ``logits`` rows.

    With ``weights`` the mean is weighted: sum(w * nll) / sum(w). A 0/1 weight
    vector gives the masked mean.
    """
    require(logits.shape[0] >= 1, LabErrorReason.EMPTY_INPUT, "cross_entropy over zero positions")
    nll = -token_log_probs(logits, targets)
    if weights is None:
        return nll.mean()
    weights = np.asarray(weights, dtype=logits.dtype)
    total = float(weights.sum())
    require(total > 0, LabErrorReason.EMPTY_INPUT, "all cross_entropy weights are zero")
    return (nll * weights).sum() * (1.0 / total)
