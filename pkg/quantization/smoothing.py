# quantization/smoothing.py
"""
One smoothing vector per MoE layer, shared by every expert and the router.

Dividing the pre-MoE RMSNorm gain by s and multiplying the matching input rows
of every expert's first matrix and of the router by s leaves full-precision
outputs unchanged while moving activation outliers into the weights.
"""
from typing import Dict

import numpy as np

from models.moe.transformer import MoETransformer
from quantization.calibration import CalibrationStats
from utils.exceptions import LabErrorReason, require


def smoothing_vector(x_max: np.ndarray, w_max: np.ndarray, alpha: float) -> np.ndarray:
    """s_j = x_max_j**alpha / w_max_j**(1 - alpha); channels with a zero maximum get 1."""
    require(0.0 <= alpha <= 1.0, LabErrorReason.INVALID_ARGUMENT, "alpha must lie in [0, 1]", alpha=alpha)
    x_max = np.asarray(x_max, dtype=np.float64)
    w_max = np.asarray(w_max, dtype=np.float64)
    require(x_max.shape == w_max.shape, LabErrorReason.SHAPE_MISMATCH, "activation and weight maxima differ in shape")
    valid = (x_max > 0) & (w_max > 0)
    s = np.ones_like(x_max)
    s[valid] = x_max[valid] ** alpha / w_max[valid] ** (1.0 - alpha)
    return s


def compute_smoothing(stats: CalibrationStats, alpha: float) -> Dict[int, np.ndarray]:
    """Per MoE layer: activation maxima over all expert inputs and the router input against the joint weight maxima."""
    smoothing = {}
    for layer in sorted(stats.counts):
        x_max = np.maximum(stats.expert_x_max[layer].max(axis=0), stats.router_x_max[layer])
        smoothing[layer] = smoothing_vector(x_max, stats.w_max[layer], alpha)
    return smoothing


def fold_smoothing(model: MoETransformer, smoothing: Dict[int, np.ndarray]) -> MoETransformer:
    """A copy of ``model`` with every layer's s folded into its pre-MoE norm, expert input matrices and router."""
    folded = model.clone(name=f"{model.name}-smoothed")
    for layer, s in smoothing.items():
        s = np.asarray(s, dtype=np.float64)
        require(np.all(s > 0), LabErrorReason.INVALID_ARGUMENT, "smoothing factors must be positive", layer=layer)
        prefix = f"layers.{layer}"
        gain = folded.params[f"{prefix}.ffn_norm"]
        gain.data = (gain.data / s).astype(folded.dtype)
        for key in [f"{prefix}.router"] + [f"{prefix}.experts.{e}.w_in" for e in range(model.config.n_experts)]:
            weight = folded.params[key]
            weight.data = (weight.data * s[:, None]).astype(folded.dtype)
    return folded
