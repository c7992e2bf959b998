#schemas/planner/schemas.py
from typing import List, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

TRACE_COLUMNS = ["stage", "chunk", "microbatch", "event", "start", "end"]


class StageCostModel(BaseModel):
    """Per-layer costs in abstract time units and per-layer memory in abstract bytes."""
    forward: List[float]
    backward: List[float]
    embed_extra: float = Field(0.0, ge=0)
    loss_extra: float = Field(0.0, ge=0)
    # share of the forward pass re-executed during backward on recomputing stages
    recompute_factor: float = Field(0.0, ge=0)
    act_memory: List[float] = []
    weight_memory: List[float] = []
    # share of activation memory kept on recomputing stages (layer-boundary tensors only)
    retention: float = Field(0.25, ge=0, le=1)

    @field_validator("forward", "backward", "act_memory", "weight_memory")
    @classmethod
    def non_negative(cls, value: List[float]) -> List[float]:
        if any(v < 0 for v in value):
            raise ValueError("costs must be non-negative")
        return value

    @model_validator(mode="after")
    def same_layer_count(self):
        n = len(self.forward)
        if n == 0:
            raise ValueError("cost model needs at least one layer")
        if len(self.backward) != n:
            raise ValueError("forward and backward costs differ in length")
        if not self.act_memory:
            self.act_memory = [0.0] * n
        if not self.weight_memory:
            self.weight_memory = [0.0] * n
        if len(self.act_memory) != n or len(self.weight_memory) != n:
            raise ValueError("memory vectors must have one entry per layer")
        return self

    @property
    def n_layers(self) -> int:
        return len(self.forward)


class PipelinePlan(BaseModel):
    stages: int = Field(..., ge=1)
    # p * v contiguous [start, end) layer ranges; chunk c runs on stage c % p as virtual chunk c // p
    ranges: List[Tuple[int, int]]
    virtual: int = Field(1, ge=1)
    microbatches: int = Field(1, ge=1)
    recompute_stages: List[int] = []

    model_config = {
        "extra": "forbid",
    }

    @model_validator(mode="after")
    def check_layout(self):
        if len(self.ranges) != self.stages * self.virtual:
            raise ValueError(f"expected {self.stages * self.virtual} layer ranges, got {len(self.ranges)}")
        cursor = 0
        for start, end in self.ranges:
            if start != cursor or end <= start:
                raise ValueError("layer ranges must be contiguous, non-empty and start at layer 0")
            cursor = end
        if self.virtual > 1 and self.microbatches % self.stages:
            raise ValueError("interleaved schedules need microbatches divisible by stages")
        if any(not 0 <= s < self.stages for s in self.recompute_stages):
            raise ValueError(f"recompute stages must lie in [0, {self.stages})")
        self.recompute_stages = sorted(set(self.recompute_stages))
        return self

    @property
    def n_layers(self) -> int:
        return self.ranges[-1][1]

    @property
    def cuts(self) -> List[int]:
        return [end for _, end in self.ranges[:-1]]

    def chunks_of(self, stage: int) -> List[int]:
        return [v * self.stages + stage for v in range(self.virtual)]


class CommModel(BaseModel):
    gpus_per_node: int = Field(8, ge=1)
    intra_bw: float = Field(4e11, gt=0)
    inter_bw: float = Field(5e10, gt=0)
    ep_degree: int = Field(8, ge=1)
    # share of all-to-all time hidden behind computation
    overlap_fraction: float = Field(0.0, ge=0, le=1)
    # fixed cost of the post-all-to-all combine copy
    combine_cost: float = Field(0.0, ge=0)

    @model_validator(mode="after")
    def fabric_order(self):
        if self.intra_bw < self.inter_bw:
            raise ValueError("intra-node bandwidth must be at least the inter-node bandwidth")
        return self


class PlannerConfig(BaseModel):
    costs: StageCostModel
    stages: int = Field(4, ge=1)
    microbatches: int = Field(8, ge=1)
    virtual: int = Field(1, ge=1)
    recompute_stages: List[int] = []
    comm: CommModel = CommModel()
    a2a_bytes: float = Field(1e9, ge=0)

    model_config = {
        "extra": "forbid",
    }
