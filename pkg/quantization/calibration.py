# quantization/calibration.py
"""
Calibration statistics gathered through the model's forward observer.

Routing counts and channel maxima are a pure fold over token batches, so
statistics of disjoint token sets combine with ``merge`` in any order.
"""
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Sequence, Tuple

import numpy as np

from core.tensor import no_grad
from models.moe.router import RouterDecision
from models.moe.transformer import MoETransformer
from utils.exceptions import LabError, LabErrorReason
from utils.logger import get_logger

logger = get_logger(__name__)


def gemm_key(layer: int, name: str) -> str:
    return f"{layer}.{name}"


def _expert_of(name: str) -> int:
    # "experts.{e}.w_in"
    return int(name.split(".")[1])


def joint_weight_max(model: MoETransformer, layer: int) -> np.ndarray:
    """Per input channel absmax over every expert's input matrix and the router, jointly."""
    rows = [np.abs(expert.w_in.data).max(axis=1) for expert in model.experts(layer)]
    rows.append(np.abs(model.params[f"layers.{layer}.router"].data).max(axis=1))
    return np.max(np.stack(rows), axis=0).astype(np.float64)


@dataclass
class CalibrationStats:
    # layer -> [N] routed token counts
    counts: Dict[int, np.ndarray] = field(default_factory=dict)
    # layer -> [N x d] channel absmax of the inputs each expert received
    expert_x_max: Dict[int, np.ndarray] = field(default_factory=dict)
    # layer -> [d] channel absmax of the router input
    router_x_max: Dict[int, np.ndarray] = field(default_factory=dict)
    # layer -> [d] joint channel absmax of expert input matrices and the router
    w_max: Dict[int, np.ndarray] = field(default_factory=dict)
    # gemm key -> per-tensor absmax of its activations
    act_max: Dict[str, float] = field(default_factory=dict)
    n_sequences: int = 0

    @classmethod
    def empty(cls, model: MoETransformer) -> "CalibrationStats":
        c = model.config
        stats = cls()
        for layer in moe_layers(model):
            stats.counts[layer] = np.zeros(c.n_experts, dtype=np.int64)
            stats.expert_x_max[layer] = np.zeros((c.n_experts, c.d_model))
            stats.router_x_max[layer] = np.zeros(c.d_model)
            stats.w_max[layer] = joint_weight_max(model, layer)
        return stats

    def merge(self, other: "CalibrationStats") -> "CalibrationStats":
        merged = CalibrationStats(n_sequences=self.n_sequences + other.n_sequences)
        for layer in sorted(set(self.counts) | set(other.counts)):
            merged.counts[layer] = _combine(self.counts, other.counts, layer, np.add)
            merged.expert_x_max[layer] = _combine(self.expert_x_max, other.expert_x_max, layer, np.maximum)
            merged.router_x_max[layer] = _combine(self.router_x_max, other.router_x_max, layer, np.maximum)
            merged.w_max[layer] = _combine(self.w_max, other.w_max, layer, np.maximum)
        for key in sorted(set(self.act_max) | set(other.act_max)):
            merged.act_max[key] = max(self.act_max.get(key, 0.0), other.act_max.get(key, 0.0))
        return merged

    def min_count(self) -> int:
        return int(min(c.min() for c in self.counts.values())) if self.counts else 0

    def skew(self, layer: int) -> np.ndarray:
        """Share of the routed tokens each expert of ``layer`` received."""
        counts = self.counts[layer].astype(np.float64)
        total = counts.sum()
        return counts / total if total else counts


def _combine(a: Dict, b: Dict, key, op):
    if key not in a:
        return b[key].copy()
    if key not in b:
        return a[key].copy()
    return op(a[key], b[key])


def moe_layers(model: MoETransformer) -> List[int]:
    return [layer for layer in range(model.config.n_layers) if model.config.is_moe_layer(layer)]


class CalibrationObserver:
    """Forward observer folding every GEMM input and routing decision into ``stats``."""

    def __init__(self, stats: CalibrationStats):
        self.stats = stats

    def on_gemm(self, layer: int, name: str, activations: np.ndarray) -> None:
        if activations.size == 0:
            return
        key = gemm_key(layer, name)
        absmax = float(np.abs(activations).max())
        self.stats.act_max[key] = max(self.stats.act_max.get(key, 0.0), absmax)
        channel_max = np.abs(activations.reshape(-1, activations.shape[-1])).max(axis=0)
        if name == "router":
            self.stats.router_x_max[layer] = np.maximum(self.stats.router_x_max[layer], channel_max)
        elif name.startswith("experts.") and name.endswith(".w_in"):
            e = _expert_of(name)
            self.stats.expert_x_max[layer][e] = np.maximum(self.stats.expert_x_max[layer][e], channel_max)

    def on_route(self, layer: int, decision: RouterDecision) -> None:
        self.stats.counts[layer] = self.stats.counts[layer] + decision.counts


class RouteRecorder:
    """Observer keeping only the routing counts of each forward."""

    def __init__(self):
        self.counts: Dict[int, np.ndarray] = {}

    def on_gemm(self, layer: int, name: str, activations: np.ndarray) -> None:
        pass

    def on_route(self, layer: int, decision: RouterDecision) -> None:
        self.counts[layer] = decision.counts.copy()


def _batches(sequences: Sequence[np.ndarray], batch_size: int) -> Iterator[np.ndarray]:
    """Runs of consecutive equal-length sequences, at most ``batch_size`` per batch."""
    start = 0
    while start < len(sequences):
        length = len(sequences[start])
        stop = start + 1
        while stop < len(sequences) and stop - start < batch_size and len(sequences[stop]) == length:
            stop += 1
        yield np.stack([np.asarray(s, dtype=np.int64) for s in sequences[start:stop]])
        start = stop


def as_sequences(tokens) -> List[np.ndarray]:
    if isinstance(tokens, np.ndarray) and tokens.ndim == 2:
        return list(tokens)
    return [np.asarray(s, dtype=np.int64) for s in tokens]


def collect_calibration(model: MoETransformer, tokens, batch_size: int = 16) -> CalibrationStats:
    """Run ``tokens`` (sequences) through ``model`` and fold routing counts and channel maxima."""
    sequences = as_sequences(tokens)
    stats = CalibrationStats.empty(model)
    previous = model.observer
    model.observer = CalibrationObserver(stats)
    try:
        with no_grad():
            for batch in _batches(sequences, batch_size):
                model.hidden_states(batch)
    finally:
        model.observer = previous
    stats.n_sequences = len(sequences)
    logger.debug("calibrated on %d sequences, min expert count %d", len(sequences), stats.min_count())
    return stats


def pre_route(model: MoETransformer, tokens) -> List[Dict[int, np.ndarray]]:
    """Per-sequence routing counts of every MoE layer, from no-grad forwards that record only routes."""
    sequences = as_sequences(tokens)
    out: List[Dict[int, np.ndarray]] = [dict() for _ in sequences]
    layers = moe_layers(model)
    previous = model.observer
    try:
        with no_grad():
            for index, sequence in enumerate(sequences):
                recorder = RouteRecorder()
                model.observer = recorder
                model.hidden_states(sequence[None, :])
                out[index] = {layer: recorder.counts[layer] for layer in layers}
    finally:
        model.observer = previous
    return out


@dataclass
class BalancedCalibration:
    tokens: List[np.ndarray]
    counts: Dict[int, np.ndarray]
    n_added: int


def balance_calibration(
    stats: CalibrationStats,
    token_pool,
    model: MoETransformer,
    tau: int,
    tokens=(),
) -> BalancedCalibration:
    """
    Add pool sequences, in pool order, that route at least one token to an expert
    still below ``tau`` until every expert of every MoE layer has ``tau`` tokens.
    """
    if tau < 1:
        raise LabError(LabErrorReason.INVALID_ARGUMENT, "tau must be >= 1", tau=tau)
    selected = as_sequences(tokens)
    counts = {layer: c.copy() for layer, c in stats.counts.items()}

    def deficit() -> List[Tuple[int, int]]:
        return [(layer, int(e)) for layer in sorted(counts) for e in np.nonzero(counts[layer] < tau)[0]]

    if not deficit():
        return BalancedCalibration(selected, counts, 0)

    pool = as_sequences(token_pool)
    routes = pre_route(model, pool)
    added = 0
    for sequence, route in zip(pool, routes):
        short = deficit()
        if not short:
            break
        if any(route[layer][e] > 0 for layer, e in short):
            selected.append(sequence)
            for layer in counts:
                counts[layer] = counts[layer] + route[layer]
            added += 1
    short = deficit()
    if short:
        layer, expert = short[0]
        raise LabError(
            LabErrorReason.POOL_EXHAUSTED,
            f"expert {expert} of layer {layer} has {int(counts[layer][expert])} calibration tokens, needs {tau}",
            layer=layer,
            expert=expert,
        )
    logger.info("balanced calibration added %d pool sequences", added)
    return BalancedCalibration(selected, counts, added)
