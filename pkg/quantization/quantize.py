# quantization/quantize.py
"""
Simulated W8A8 quantization: every attention, router and expert projection
of a model runs on quantize-dequantized weights (per output channel) and
activations (per tensor).
"""
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np

from core.checkpoint import load_checkpoint, save_checkpoint
from core.tensor import Tensor, tensor
from models.moe.transformer import MoETransformer
from quantization.calibration import (
    BalancedCalibration,
    CalibrationStats,
    balance_calibration,
    collect_calibration,
    gemm_key,
    moe_layers,
)
from quantization.fp8 import absmax_scale, fp8_qdq, identity_qdq
from quantization.smoothing import compute_smoothing, fold_smoothing
from schemas.quantization.schemas import QuantScheme
from utils.exceptions import LabError, LabErrorReason
from utils.logger import get_logger

logger = get_logger(__name__)


def projection_weights(model: MoETransformer) -> Dict[str, Tensor]:
    """gemm key -> weight of every hookable projection (attention, router, experts, dense FFN)."""
    weights = {}
    for layer in range(model.config.n_layers):
        prefix = f"layers.{layer}."
        for key, param in model.params.items():
            if not key.startswith(prefix) or key.endswith("_norm"):
                continue
            name = key[len(prefix):]
            weights[gemm_key(layer, name)] = param
    return weights


def build_scheme(
    model: MoETransformer,
    stats: CalibrationStats,
    smoothing: Optional[Dict[int, np.ndarray]] = None,
    tau: int = 1,
    alpha: float = 0.5,
    numerics: str = "e4m3",
) -> QuantScheme:
    """
    Weight scales from the model's weights and activation scales from calibration
    maxima. Every expert must have seen at least one calibration token.
    """
    for layer in moe_layers(model):
        missing = np.nonzero(stats.counts[layer] == 0)[0]
        if missing.size:
            raise LabError(
                LabErrorReason.MISSING_CALIBRATION,
                f"expert {int(missing[0])} of layer {layer} received no calibration tokens",
                layer=layer,
                expert=int(missing[0]),
            )
    weight_scales = {
        key: absmax_scale(np.abs(weight.data).max(axis=0)) for key, weight in projection_weights(model).items()
    }
    act_scales = {key: float(absmax_scale(value)) for key, value in sorted(stats.act_max.items())}
    return QuantScheme(
        numerics=numerics,
        tau=tau,
        alpha=alpha,
        smoothing=smoothing or {},
        weight_scales=weight_scales,
        act_scales=act_scales,
    )


def quantize_model(model: MoETransformer, scheme: QuantScheme) -> MoETransformer:
    """A copy of ``model`` whose projection GEMMs run through the scheme's numerics."""
    qdq = identity_qdq if scheme.numerics == "identity" else fp8_qdq
    qmodel = model.clone(name=f"{model.name}-{scheme.numerics}")
    weights = {
        key: qdq(weight.data, scheme.weight_scales[key])
        for key, weight in projection_weights(qmodel).items()
        if key in scheme.weight_scales
    }

    def hook(layer: int, name: str, x: Tensor, weight: Tensor) -> Tensor:
        key = gemm_key(layer, name)
        if key not in weights or key not in scheme.act_scales:
            raise LabError(LabErrorReason.MISSING_CALIBRATION, f"no quantization scales for {key}", gemm=key)
        x_q = qdq(x.data, scheme.act_scales[key])
        return tensor(x_q @ weights[key], dtype=qmodel.dtype)

    qmodel.gemm_hook = hook
    return qmodel


def identity_scheme(model: MoETransformer, stats: CalibrationStats) -> QuantScheme:
    return build_scheme(model, stats, numerics="identity")


@dataclass
class QuantizationResult:
    qmodel: MoETransformer
    scheme: QuantScheme
    stats: CalibrationStats
    balanced: Optional[BalancedCalibration] = None


def naive_quantize(model: MoETransformer, calibration_tokens) -> QuantizationResult:
    """Unbalanced calibration, no smoothing."""
    stats = collect_calibration(model, calibration_tokens)
    scheme = build_scheme(model, stats)
    return QuantizationResult(quantize_model(model, scheme), scheme, stats)


def expert_aware_quantize(
    model: MoETransformer,
    calibration_tokens,
    token_pool,
    tau: int,
    alpha: float,
) -> QuantizationResult:
    """
    Balance calibration toward rarely routed experts, smooth with one vector per
    MoE layer, fold it into the model, then recalibrate the folded model.
    """
    stats = collect_calibration(model, calibration_tokens)
    balanced = balance_calibration(stats, token_pool, model, tau, tokens=calibration_tokens)
    stats = collect_calibration(model, balanced.tokens)
    smoothing = compute_smoothing(stats, alpha)
    folded = fold_smoothing(model, smoothing)
    folded_stats = collect_calibration(folded, balanced.tokens)
    scheme = build_scheme(folded, folded_stats, smoothing, tau=tau, alpha=alpha)
    logger.info(
        "expert-aware scheme: %d calibration sequences (%d added), min expert count %d",
        len(balanced.tokens), balanced.n_added, folded_stats.min_count(),
    )
    return QuantizationResult(quantize_model(folded, scheme), scheme, folded_stats, balanced)


def save_scheme(scheme: QuantScheme, out_dir: Union[str, Path]) -> Path:
    """scheme.json (manifest) plus scales.bin holding every vector in the checkpoint layout."""
    out_dir = Path(out_dir)
    arrays = {f"smoothing.{layer}": s for layer, s in scheme.smoothing.items()}
    arrays.update({f"weight_scale.{key}": scale for key, scale in scheme.weight_scales.items()})
    save_checkpoint(out_dir / "scales.bin", arrays)
    manifest = {
        "numerics": scheme.numerics,
        "tau": scheme.tau,
        "alpha": scheme.alpha,
        "act_scales": scheme.act_scales,
        "smoothing_layers": sorted(scheme.smoothing),
        "weight_scale_keys": sorted(scheme.weight_scales),
        "arrays": "scales.bin",
    }
    path = out_dir / "scheme.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def load_scheme(out_dir: Union[str, Path]) -> QuantScheme:
    out_dir = Path(out_dir)
    manifest = json.loads((out_dir / "scheme.json").read_text(encoding="utf-8"))
    arrays = load_checkpoint(out_dir / manifest["arrays"])
    return QuantScheme(
        numerics=manifest["numerics"],
        tau=manifest["tau"],
        alpha=manifest["alpha"],
        smoothing={int(layer): arrays[f"smoothing.{layer}"] for layer in manifest["smoothing_layers"]},
        weight_scales={key: arrays[f"weight_scale.{key}"] for key in manifest["weight_scale_keys"]},
        act_scales=manifest["act_scales"],
    )
