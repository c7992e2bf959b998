#schemas/sft/schemas.py
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator

from schemas.moe.schemas import MoEConfig

Domain = Literal["ecommerce", "general"]


class SftRecord(BaseModel):
    """One JSON Lines record of the SFT dataset."""
    prompt: str
    answer: str
    domain: Domain
    turns: List[str] = []

    @field_validator("answer")
    @classmethod
    def answer_not_empty(cls, value: str) -> str:
        if not value:
            raise ValueError("answer must not be empty")
        return value


class SftSample(BaseModel):
    # x: prior turns (each closed by EOT) followed by the prompt
    prompt: List[int]
    # y
    answer: List[int]
    domain: Domain
    # indices of EOT tokens inside the encoded sequence
    turn_boundaries: List[int] = []


class PackedBatch(BaseModel):
    tokens: np.ndarray
    loss_mask: np.ndarray
    # sample index within the pack, -1 on PAD
    segment_ids: np.ndarray
    positions: np.ndarray
    pad_count: int
    sample_indices: List[int]

    model_config = {
        "arbitrary_types_allowed": True
    }

    @property
    def max_len(self) -> int:
        return int(self.tokens.shape[0])


class SftConfig(BaseModel):
    max_len: int = Field(64, ge=2)
    packs_per_step: int = Field(4, ge=1)
    epochs: int = Field(1, ge=1)
    lr: float = Field(1e-3, ge=0)
    weight_decay: float = Field(0.0, ge=0)
    max_grad_norm: float = Field(1.0, gt=0)
    log_every: int = Field(10, ge=1)

    model_config = {
        "extra": "forbid",
    }


class SftRunConfig(BaseModel):
    model: MoEConfig = MoEConfig(max_seq_len=128)
    sft: SftConfig = SftConfig(max_len=128)
    # JSONL records; None generates n_records synthetic ones
    data_path: Optional[str] = None
    n_records: int = Field(64, ge=1)
    checkpoint: Optional[str] = None

    model_config = {
        "extra": "forbid",
    }
