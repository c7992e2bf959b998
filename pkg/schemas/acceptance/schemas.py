#schemas/acceptance/schemas.py
from typing import List, Optional

from pydantic import BaseModel, Field, field_validator

ACCEPTANCE_COLUMNS = ["criterion", "name", "passed", "value", "detail"]
N_CRITERIA = 13


class AcceptanceBudget(BaseModel):
    """Step and case counts of the training-heavy and enumerative checks."""
    balancing_steps: int = Field(500, ge=1)
    gradcheck_cases: int = Field(100, ge=1)
    sft_samples: int = Field(1000, ge=1)
    rm_pairs: int = Field(64, ge=8)
    mixture_shards: int = Field(8, ge=2)
    n_mixtures: int = Field(512, ge=8)
    sweep_steps: int = Field(60, ge=1)
    cross_scale_mixtures: int = Field(32, ge=2)
    planner_seeds: int = Field(200, ge=1)

    model_config = {
        "extra": "forbid",
    }


class AcceptanceConfig(BaseModel):
    full: AcceptanceBudget = AcceptanceBudget()
    quick: AcceptanceBudget = AcceptanceBudget(
        balancing_steps=150,
        gradcheck_cases=20,
        sft_samples=200,
        rm_pairs=48,
        mixture_shards=4,
        n_mixtures=48,
        sweep_steps=20,
        cross_scale_mixtures=12,
        planner_seeds=50,
    )
    # None runs every criterion
    criteria: Optional[List[int]] = None

    model_config = {
        "extra": "forbid",
    }

    @field_validator("criteria")
    @classmethod
    def known_criteria(cls, value: Optional[List[int]]) -> Optional[List[int]]:
        if value is not None:
            unknown = [c for c in value if not 1 <= c <= N_CRITERIA]
            if unknown:
                raise ValueError(f"unknown acceptance criteria {unknown}")
            if not value:
                raise ValueError("criteria must not be empty")
        return value


class CriterionResult(BaseModel):
    criterion: int
    name: str
    passed: bool
    value: float
    detail: str = ""
