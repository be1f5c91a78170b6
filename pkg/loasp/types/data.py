"""Synthetic dataset and protocol types."""

from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, NonNegativeInt


class LesionInventory(BaseModel):
    """Lesion counts drawn into one synthetic image."""

    microaneurysm_count: NonNegativeInt = 0
    hemorrhage_count: NonNegativeInt = 0
    hard_exudate_count: NonNegativeInt = 0
    soft_exudate_count: NonNegativeInt = 0
    neovascular_tangles: NonNegativeInt = 0

    def as_tuple(self) -> Tuple[int, int, int, int, int]:
        return (
            self.microaneurysm_count,
            self.hemorrhage_count,
            self.hard_exudate_count,
            self.soft_exudate_count,
            self.neovascular_tangles,
        )


class DomainSpec(BaseModel):
    """Acquisition style of one synthetic domain."""

    model_config = ConfigDict(frozen=True)

    domain_id: str
    gamma: float = Field(1.0, ge=0.5, le=2.0)
    tint: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    blur_sigma: float = Field(0.0, ge=0.0, le=3.0)
    noise_sigma: float = Field(0.0, ge=0.0, le=0.1)
    vessel_scale: float = Field(1.0, ge=0.5, le=2.0)
    illumination: float = Field(0.0, ge=0.0, le=0.5)


class SyntheticSample(BaseModel):
    """One generated image with its label and provenance."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    image: np.ndarray
    grade: int = Field(ge=0, le=4)
    inventory: LesionInventory
    domain_id: str
    seed_index: NonNegativeInt


class Split(BaseModel):
    """Train and test domains of one protocol instance."""

    mode: Literal["DG", "SDG"]
    train_domains: List[str]
    test_domains: List[str]
    held_out: Optional[str] = None
