#schemas/mixture/schemas.py
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field, field_validator

from schemas.moe.schemas import MoEConfig
from schemas.synthetic.schemas import SyntheticConfig

SIMPLEX_TOL = 1e-9


class MixtureSpec(BaseModel):
    weights: List[float]

    @field_validator("weights")
    @classmethod
    def on_simplex(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("mixture needs at least one shard")
        if any(w < 0 for w in value) or abs(sum(value) - 1.0) > SIMPLEX_TOL:
            raise ValueError("mixture weights must be non-negative and sum to 1")
        return value

    @property
    def n_shards(self) -> int:
        return len(self.weights)


class ShardEntry(BaseModel):
    id: int
    path: str
    label: str = ""


class ShardManifest(BaseModel):
    shards: List[ShardEntry]


class ProxyRun(BaseModel):
    mixture: MixtureSpec
    index: int
    seed: int
    # NaN when the run diverged
    val_loss: float
    diverged: bool = False
    width: int = 1
    # losses on named candidate validation streams and the benchmark stream
    eval_losses: Dict[str, float] = {}


class SweepConfig(BaseModel):
    proxy: MoEConfig = MoEConfig(
        d_model=16, n_layers=1, n_heads=2, n_experts=2, top_k=1, d_ff=16, max_seq_len=32, mtp_depth=0
    )
    n_mixtures: int = Field(512, ge=1)
    token_budget: int = Field(8192, ge=1)
    steps: int = Field(60, ge=1)
    batch_size: int = Field(8, ge=1)
    seq_len: int = Field(32, ge=2)
    lr: float = Field(1e-2, gt=0)
    chunk_len: int = Field(32, ge=1)
    eval_windows: int = Field(32, ge=1)
    pool_size: int = Field(4096, ge=1)
    regressor: Literal["stumps", "ridge"] = "stumps"
    n_trees: int = Field(500, ge=1)
    learning_rate: float = Field(0.1, gt=0)
    width_multiplier: int = Field(4, ge=1)
    cross_scale_mixtures: int = Field(32, ge=2)
    n_baselines: int = Field(5, ge=1)
    spearman_threshold: float = Field(0.7, ge=0, le=1)
    # mixture the held-out target stream is drawn from; None draws one from the seed
    target_weights: Optional[List[float]] = None
    eval_tokens: int = Field(4096, ge=2)
    heldout_fraction: float = Field(0.2, gt=0, lt=1)
    validation_steps: int = Field(120, ge=1)
    run_cross_scale: bool = True
    run_validation: bool = True

    model_config = {
        "extra": "forbid",
    }


class ScreeningEntry(BaseModel):
    name: str
    pearson: float
    spearman: float
    retained: bool


class ScreeningReport(BaseModel):
    threshold: float
    n_runs: int
    entries: List[ScreeningEntry]
    cross_scale_spearman: Optional[float] = None


class ValidationReport(BaseModel):
    chosen: MixtureSpec
    chosen_loss: float
    baseline_losses: List[float]
    median_baseline_loss: float
    delta: float
    passed: bool


class MixtureSearchRunConfig(BaseModel):
    sweep: SweepConfig = SweepConfig()
    data: SyntheticConfig = SyntheticConfig(n_shards=8, n_tokens=20_000, n_sft_records=0)
    # shard manifest written by gen-synthetic; None generates shards from data
    manifest: Optional[str] = None

    model_config = {
        "extra": "forbid",
    }
