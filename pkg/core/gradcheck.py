# core/gradcheck.py
"""Central finite-difference checks for every differentiable op."""
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from core import functional as F
from core.tensor import Tensor, backward, concat, no_grad, scatter_rows

Builder = Callable[[np.random.Generator], Tuple[List[np.ndarray], Callable[..., Tensor]]]


@dataclass(frozen=True)
class OpCase:
    name: str
    build: Builder


def _normal(rng, *shape):
    return rng.standard_normal(shape)


def _positive(rng, *shape):
    return 0.5 + rng.random(shape) * 1.5


def _gather_case(rng):
    index = rng.integers(0, 4, size=6)
    return [_normal(rng, 4, 3)], lambda x: x[index]


def _scatter_case(rng):
    index = rng.integers(0, 3, size=5)
    return [_normal(rng, 5, 2)], lambda x: scatter_rows(x, index, 3)


def _cross_entropy_case(rng):
    targets = rng.integers(0, 5, size=4)
    weights = rng.random(4) + 0.1
    return [_normal(rng, 4, 5)], lambda x: F.cross_entropy(x, targets, weights)


OP_REGISTRY: Dict[str, OpCase] = {
    case.name: case
    for case in [
        OpCase("add", lambda rng: ([_normal(rng, 3, 4), _normal(rng, 4)], lambda a, b: a + b)),
        OpCase("sub", lambda rng: ([_normal(rng, 3, 4), _normal(rng, 3, 1)], lambda a, b: a - b)),
        OpCase("mul", lambda rng: ([_normal(rng, 3, 4), _normal(rng, 3, 1)], lambda a, b: a * b)),
        OpCase("div", lambda rng: ([_normal(rng, 3, 4), 1.0 + _positive(rng, 4)], lambda a, b: a / b)),
        OpCase("neg", lambda rng: ([_normal(rng, 3, 4)], lambda a: -a)),
        OpCase("pow", lambda rng: ([_positive(rng, 3, 4)], lambda a: a ** 1.5)),
        OpCase("square", lambda rng: ([_normal(rng, 3, 4)], lambda a: a ** 2)),
        OpCase("exp", lambda rng: ([_normal(rng, 3, 4)], lambda a: a.exp())),
        OpCase("log", lambda rng: ([_positive(rng, 3, 4)], lambda a: a.log())),
        OpCase("sqrt", lambda rng: ([_positive(rng, 3, 4)], lambda a: a.sqrt())),
        OpCase("sigmoid", lambda rng: ([_normal(rng, 3, 4)], lambda a: a.sigmoid())),
        OpCase("tanh", lambda rng: ([_normal(rng, 3, 4)], lambda a: a.tanh())),
        OpCase("silu", lambda rng: ([_normal(rng, 3, 4)], F.silu)),
        OpCase("softplus", lambda rng: ([_normal(rng, 3, 4)], F.softplus)),
        OpCase("matmul", lambda rng: ([_normal(rng, 5, 4), _normal(rng, 4, 3)], lambda a, b: a @ b)),
        OpCase(
            "batched_matmul",
            lambda rng: ([_normal(rng, 2, 3, 4), _normal(rng, 4, 2)], lambda a, b: a @ b),
        ),
        OpCase("sum", lambda rng: ([_normal(rng, 3, 4)], lambda a: a.sum(axis=0))),
        OpCase("mean", lambda rng: ([_normal(rng, 3, 4)], lambda a: a.mean(axis=-1, keepdims=True))),
        OpCase("reshape", lambda rng: ([_normal(rng, 3, 4)], lambda a: a.reshape(2, 6) * a.reshape(2, 6))),
        OpCase("transpose", lambda rng: ([_normal(rng, 2, 3, 4)], lambda a: a.transpose(2, 0, 1))),
        OpCase("gather", _gather_case),
        OpCase("scatter_rows", _scatter_case),
        OpCase(
            "concat",
            lambda rng: ([_normal(rng, 2, 3), _normal(rng, 4, 3)], lambda a, b: concat([a, b], axis=0)),
        ),
        OpCase("logsumexp", lambda rng: ([_normal(rng, 3, 5)], lambda a: F.logsumexp(a, axis=-1))),
        OpCase("softmax_rows", lambda rng: ([_normal(rng, 3, 5)], F.softmax_rows)),
        OpCase("log_softmax", lambda rng: ([_normal(rng, 3, 5)], F.log_softmax)),
        OpCase(
            "rms_norm",
            lambda rng: ([_normal(rng, 3, 5), _normal(rng, 5)], lambda x, g: F.rms_norm(x, g, 1e-6)),
        ),
        OpCase("cross_entropy", _cross_entropy_case),
    ]
}


def _loss(fn: Callable[..., Tensor], inputs: Sequence[Tensor], probe: np.ndarray) -> Tensor:
    out = fn(*inputs)
    return (out * probe).sum()


def check_gradients(case: OpCase, rng: np.random.Generator, h: float = 1e-3) -> float:
    """
    Relative error between the analytic and central-difference gradients of a
    random linear functional of the op output, over all inputs jointly.
    """
    arrays, fn = case.build(rng)
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    with no_grad():
        shape = fn(*[Tensor(a) for a in arrays]).shape
    probe = rng.standard_normal(shape)
    backward(_loss(fn, leaves, probe), params=leaves)
    analytic = np.concatenate([leaf.grad.reshape(-1) for leaf in leaves])

    numeric = []
    for position, base in enumerate(arrays):
        flat = base.reshape(-1)
        for i in range(flat.size):
            values = []
            for sign in (1.0, -1.0):
                bumped = flat.copy()
                bumped[i] += sign * h
                inputs = [Tensor(a) for a in arrays]
                inputs[position] = Tensor(bumped.reshape(base.shape))
                with no_grad():
                    values.append(_loss(fn, inputs, probe).item())
            numeric.append((values[0] - values[1]) / (2 * h))
    numeric = np.asarray(numeric)
    scale = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    return float(np.linalg.norm(analytic - numeric) / max(scale, 1e-12))
