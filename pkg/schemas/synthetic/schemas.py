#schemas/synthetic/schemas.py
from typing import List, Literal, Optional

from pydantic import BaseModel, Field, model_validator


class SyntheticShardSpec(BaseModel):
    id: int
    kind: Literal["markov", "template"] = "markov"
    # markov shards: order 0 (i.i.d. unigram) or 1 (first-order chain)
    markov_order: int = Field(1, ge=0, le=1)
    vocab_lo: int = Field(0, ge=0)
    vocab_hi: int = Field(16, ge=1)
    # Dirichlet concentration of the unigram / transition rows; low is peaky
    concentration: float = Field(0.5, gt=0)
    # template shards
    template_family: Optional[Literal["ecommerce", "general"]] = None
    label: str = ""

    @model_validator(mode="after")
    def check_band(self):
        if self.vocab_hi <= self.vocab_lo:
            raise ValueError("vocab band is empty")
        if self.vocab_hi > 256:
            raise ValueError("vocab band must lie within the byte range")
        if self.kind == "template" and self.template_family is None:
            raise ValueError("template shards need a template_family")
        return self

    @property
    def band_size(self) -> int:
        return self.vocab_hi - self.vocab_lo


class SyntheticConfig(BaseModel):
    n_shards: int = Field(16, ge=1)
    band_width: int = Field(16, ge=1)
    markov_order: int = Field(1, ge=0, le=1)
    concentration: float = Field(0.5, gt=0)
    n_tokens: int = Field(100_000, ge=1)
    n_sft_records: int = Field(256, ge=0)
    shards: List[SyntheticShardSpec] = []

    model_config = {
        "extra": "forbid",
    }

    def shard_specs(self) -> List[SyntheticShardSpec]:
        """Explicit shards if given, else n_shards disjoint bands of band_width tokens."""
        if self.shards:
            return self.shards
        return [
            SyntheticShardSpec(
                id=i,
                markov_order=self.markov_order,
                vocab_lo=i * self.band_width,
                vocab_hi=(i + 1) * self.band_width,
                concentration=self.concentration,
                label=f"lang{i:02d}",
            )
            for i in range(self.n_shards)
        ]
