#schemas/evaluation/schemas.py
from typing import Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator

from schemas.moe.schemas import MoEConfig
from schemas.synthetic.schemas import SyntheticConfig

SuiteName = Literal["languages", "sft"]
Numerics = Literal["full", "identity", "e4m3"]

EVAL_COLUMNS = ["suite", "slice", "n_sequences", "n_tokens", "loss", "accuracy"]


class EvalSuite(BaseModel):
    """Named slices of token sequences; a slice without a loss mask is scored on every prediction."""
    name: str
    slices: Dict[str, np.ndarray]
    loss_masks: Dict[str, np.ndarray] = {}

    model_config = {
        "arbitrary_types_allowed": True
    }

    @model_validator(mode="after")
    def check_masks(self):
        for name, mask in self.loss_masks.items():
            if name not in self.slices:
                raise ValueError(f"loss mask for unknown slice {name}")
            if mask.shape != self.slices[name].shape:
                raise ValueError(f"loss mask of slice {name} does not match its tokens")
        return self


class EvalRow(BaseModel):
    suite: str
    slice: str
    n_sequences: int
    # prediction positions scored
    n_tokens: int
    loss: float
    accuracy: float


class EvalRunConfig(BaseModel):
    model: MoEConfig = MoEConfig(max_seq_len=128)
    checkpoint: Optional[str] = None
    suites: List[SuiteName] = ["languages", "sft"]
    numerics: Numerics = "full"
    data: SyntheticConfig = SyntheticConfig(n_shards=4, n_tokens=20_000, n_sft_records=0)
    heldout_fraction: float = Field(0.1, gt=0, lt=1)
    seq_len: int = Field(32, ge=2)
    windows: int = Field(8, ge=1)
    n_sft_records: int = Field(16, ge=1)
    calibration_sequences: int = Field(16, ge=1)

    model_config = {
        "extra": "forbid",
    }
