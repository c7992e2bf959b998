#schemas/moe/schemas.py
from typing import List, Literal, Optional

from pydantic import BaseModel, Field, model_validator

from schemas.synthetic.schemas import SyntheticConfig


class MoEConfig(BaseModel):
    vocab_size: int = Field(260, ge=2)
    d_model: int = Field(32, ge=1)
    n_layers: int = Field(2, ge=1)
    n_heads: int = Field(2, ge=1)
    n_experts: int = Field(4, ge=1)
    top_k: int = Field(2, ge=1)
    d_ff: int = Field(32, ge=1)
    max_seq_len: int = Field(64, ge=2)
    mtp_depth: int = Field(1, ge=0)
    alpha0: float = Field(0.01, ge=0)
    beta0: float = Field(0.001, ge=0)
    decay_steps: int = Field(1000, ge=1)
    alpha_floor: float = Field(0.0, ge=0)
    beta_floor: float = Field(0.0, ge=0)
    # layer indices with a sparse FFN; None means every layer
    moe_layers: Optional[List[int]] = None
    init_std: float = Field(0.02, gt=0)
    norm_eps: float = Field(1e-6, gt=0)
    dtype: Literal["float32", "float64"] = "float32"

    model_config = {
        "extra": "forbid",
    }

    @model_validator(mode="after")
    def check_shape_rules(self):
        if self.top_k > self.n_experts:
            raise ValueError(f"top_k={self.top_k} exceeds n_experts={self.n_experts}")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.alpha_floor > self.alpha0 or self.beta_floor > self.beta0:
            raise ValueError("coefficient floors must not exceed their initial values")
        if self.moe_layers is not None and any(not 0 <= l < self.n_layers for l in self.moe_layers):
            raise ValueError(f"moe_layers must lie in [0, {self.n_layers})")
        return self

    def is_moe_layer(self, layer: int) -> bool:
        return self.moe_layers is None or layer in self.moe_layers


class PretrainConfig(BaseModel):
    steps: int = Field(200, ge=0)
    batch_size: int = Field(8, ge=1)
    seq_len: int = Field(32, ge=2)
    lr: float = Field(3e-3, ge=0)
    weight_decay: float = Field(0.01, ge=0)
    max_grad_norm: Optional[float] = Field(1.0, gt=0)
    log_every: int = Field(50, ge=1)

    model_config = {
        "extra": "forbid",
    }


class TrainLogRow(BaseModel):
    step: int
    L_LM: float
    L_aux: float
    L_Z: float
    L_MTP: float
    alpha: float
    beta: float
    expert_usage_entropy: float


TRAIN_LOG_COLUMNS = list(TrainLogRow.model_fields)


class PretrainRunConfig(BaseModel):
    model: MoEConfig = MoEConfig(max_seq_len=128)
    pretrain: PretrainConfig = PretrainConfig()
    data: SyntheticConfig = SyntheticConfig(n_shards=4, n_tokens=20_000, n_sft_records=0)
    # shard weights of the training stream; None is uniform
    mixture: Optional[List[float]] = None
    heldout_fraction: float = Field(0.1, gt=0, lt=1)
    eval_windows: int = Field(16, ge=1)

    model_config = {
        "extra": "forbid",
    }

    @model_validator(mode="after")
    def check_mixture(self):
        if self.mixture is not None:
            if len(self.mixture) != len(self.data.shard_specs()):
                raise ValueError("mixture needs one weight per data shard")
            if any(w < 0 for w in self.mixture) or abs(sum(self.mixture) - 1.0) > 1e-6:
                raise ValueError("mixture weights must be non-negative and sum to 1")
        if self.pretrain.seq_len > self.model.max_seq_len:
            raise ValueError("pretrain seq_len exceeds the model's max_seq_len")
        return self
