#schemas/alignment/schemas.py
import math
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from schemas.moe.schemas import MoEConfig

Source = Literal["on_policy", "off_policy"]
Order = Literal["curriculum", "input", "shuffled"]


class PreferenceRecord(BaseModel):
    """One JSON Lines record of the preference dataset."""
    prompt: str
    chosen: str
    rejected: str
    chosen_source: Source
    domain: str = "general"


class PreferencePair(BaseModel):
    prompt: List[int]
    chosen: List[int]
    rejected: List[int]
    chosen_source: Source
    domain: str = "general"
    # rejected responses are always sampled from the policy being trained
    rejected_source: Literal["on_policy"] = "on_policy"
    chosen_score: Optional[float] = None
    rejected_score: Optional[float] = None

    @model_validator(mode="after")
    def check_distinct(self):
        if self.chosen == self.rejected:
            raise ValueError("chosen and rejected responses are identical")
        if not self.chosen or not self.rejected:
            raise ValueError("responses must not be empty")
        return self


class Candidate(BaseModel):
    tokens: List[int]
    source: Source
    index: int
    score: float = 0.0


class TransportPlan(BaseModel):
    coupling: np.ndarray
    log_coupling: np.ndarray
    a: np.ndarray
    b: np.ndarray
    epsilon: float
    rho: float = math.inf
    iterations: int
    converged: bool
    max_violation: float

    model_config = {
        "arbitrary_types_allowed": True
    }

    @property
    def balanced(self) -> bool:
        return math.isinf(self.rho)


class TokenWeights(BaseModel):
    w_c: np.ndarray
    w_r: np.ndarray

    model_config = {
        "arbitrary_types_allowed": True
    }

    @classmethod
    def uniform(cls, n_c: int, n_r: int) -> "TokenWeights":
        return cls(w_c=np.full(n_c, 1.0 / n_c), w_r=np.full(n_r, 1.0 / n_r))


class AlignConfig(BaseModel):
    otpo: bool = True
    epsilon: float = Field(1.0, gt=0)
    # KL relaxation strength of the plan marginals; inf gives the balanced plan
    rho: float = Field(1.0, gt=0)
    beta_dpo: float = Field(0.1, gt=0)
    sinkhorn_max_iter: int = Field(500, ge=1)
    sinkhorn_tol: float = Field(1e-6, gt=0)
    cached_reference: bool = True
    steps: int = Field(10, ge=0)
    lr: float = Field(1e-4, ge=0)
    weight_decay: float = Field(0.0, ge=0)
    log_every: int = Field(5, ge=1)

    model_config = {
        "extra": "forbid",
    }


class RewardConfig(BaseModel):
    margin: float = 0.0
    order: Order = "curriculum"
    epochs: int = Field(2, ge=1)
    batch_size: int = Field(8, ge=1)
    lr: float = Field(3e-3, ge=0)
    weight_decay: float = Field(0.0, ge=0)
    log_every: int = Field(10, ge=1)

    model_config = {
        "extra": "forbid",
    }

    @field_validator("margin")
    @classmethod
    def margin_non_negative(cls, value: float) -> float:
        if value < 0:
            raise ValueError("margin must be non-negative")
        return value


class PairBuildConfig(BaseModel):
    n_candidates: int = Field(4, ge=1)
    max_new_tokens: int = Field(16, ge=1)
    temperature: float = Field(1.0, gt=0)
    max_response_len: Optional[int] = None
    banned_tokens: List[int] = []
    require_eos: bool = False

    model_config = {
        "extra": "forbid",
    }


class AlignRunConfig(BaseModel):
    model: MoEConfig = MoEConfig(max_seq_len=128)
    align: AlignConfig = AlignConfig()
    pairs: PairBuildConfig = PairBuildConfig()
    # prompts for pair construction; ignored when preferences_path is given
    n_prompts: int = Field(8, ge=1)
    preferences_path: Optional[str] = None
    checkpoint: Optional[str] = None

    model_config = {
        "extra": "forbid",
    }


class RewardRunConfig(BaseModel):
    model: MoEConfig = MoEConfig(max_seq_len=128)
    reward: RewardConfig = RewardConfig(epochs=3)
    # synthetic separable pairs; ignored when preferences_path is given
    n_pairs: int = Field(64, ge=2)
    heldout_fraction: float = Field(0.25, gt=0, lt=1)
    preferences_path: Optional[str] = None
    checkpoint: Optional[str] = None

    model_config = {
        "extra": "forbid",
    }
