"""Complexity and parameter accounting types."""

from typing import List

from pydantic import BaseModel, Field, PositiveInt, model_validator


class BlockShape(BaseModel):
    """A host block as seen by the cost formulas."""

    K: PositiveInt = 3
    C_in: PositiveInt
    C_out: PositiveInt
    H: PositiveInt
    W: PositiveInt
    count: PositiveInt = 1


class ComponentCost(BaseModel):
    """Parameters and FLOPs of one plug-in component of one block."""

    block_id: int
    channels: int
    component: str
    params: int = Field(ge=0)
    flops: int = Field(ge=0)


class EfficiencyCheck(BaseModel):
    """The r >= 3 claim evaluated for one catalog entry."""

    block_id: int
    r: int
    loasp_flops: int
    baseline_flops: int

    @property
    def holds(self) -> bool:
        return self.loasp_flops < self.baseline_flops


class CostReport(BaseModel):
    """Per-component costs over a catalog, with totals and the 5x bound."""

    rows: List[ComponentCost]
    total_params: int
    total_flops: int
    bound_flops: int = Field(description="Sum of 5 * O_proj over the catalog")
    baseline_flops: int = Field(description="Sum of one K x K full-resolution convolution per block")
    efficiency: List[EfficiencyCheck] = Field(default_factory=list)

    @model_validator(mode="after")
    def _totals_are_sums(self) -> "CostReport":
        if self.total_params != sum(row.params for row in self.rows):
            raise ValueError("total_params must equal the sum of component params")
        if self.total_flops != sum(row.flops for row in self.rows):
            raise ValueError("total_flops must equal the sum of component flops")
        return self
