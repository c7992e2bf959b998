#schemas/quantization/schemas.py
from typing import Dict, List, Literal

import numpy as np
from pydantic import BaseModel, Field, model_validator

import settings

Metric = Literal["accuracy", "output_mse"]
Numerics = Literal["e4m3", "identity"]

REPORT_COLUMNS = ["slice", "metric", "fp32_value", "quant_value", "delta"]


class QuantScheme(BaseModel):
    """Everything needed to rebuild a quantized model from its full-precision (smoothed) weights."""
    numerics: Numerics = "e4m3"
    tau: int = Field(settings.QUANTIZATION["MIN_EXPERT_COUNT"], ge=1)
    alpha: float = Field(settings.QUANTIZATION["SMOOTH_ALPHA"], ge=0, le=1)
    # MoE layer -> smoothing vector; empty when the model was not smoothed
    smoothing: Dict[int, np.ndarray] = {}
    # gemm key "layer.name" -> per-output-channel weight scale
    weight_scales: Dict[str, np.ndarray] = {}
    # gemm key -> per-tensor activation scale
    act_scales: Dict[str, float] = {}

    model_config = {
        "arbitrary_types_allowed": True,
    }

    @model_validator(mode="after")
    def check_positive(self):
        for layer, s in self.smoothing.items():
            if np.any(np.asarray(s) <= 0):
                raise ValueError(f"smoothing vector of layer {layer} must be positive")
        for key, scale in self.weight_scales.items():
            if np.any(np.asarray(scale) <= 0):
                raise ValueError(f"weight scale of {key} must be positive")
        for key, scale in self.act_scales.items():
            if scale <= 0:
                raise ValueError(f"activation scale of {key} must be positive")
        return self


class QuantizeConfig(BaseModel):
    tau: int = Field(settings.QUANTIZATION["MIN_EXPERT_COUNT"], ge=1)
    alpha: float = Field(settings.QUANTIZATION["SMOOTH_ALPHA"], ge=0, le=1)
    metric: Metric = "output_mse"
    # skewed: the constructed skew-routed model; trained: a briefly pretrained model on synthetic shards
    model: Literal["skewed", "trained"] = "skewed"
    calibration_sequences: int = Field(64, ge=1)
    rare_fraction: float = Field(0.1, gt=0, lt=1)
    pool_sequences: int = Field(512, ge=1)
    eval_sequences: int = Field(32, ge=1)
    seq_len: int = Field(16, ge=2)
    pretrain_steps: int = Field(100, ge=0)

    model_config = {
        "extra": "forbid",
    }


class ErrorReportRow(BaseModel):
    slice: str
    metric: Metric
    fp32_value: float
    quant_value: float
    delta: float


class ErrorReport(BaseModel):
    rows: List[ErrorReportRow] = []

    def by_slice(self) -> Dict[str, ErrorReportRow]:
        return {row.slice: row for row in self.rows}
