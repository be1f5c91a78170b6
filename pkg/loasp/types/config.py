"""Run configuration types."""

from typing import List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class SplineConfig(_Section):
    """B-spline activation inside the adaptive projector."""

    p: int = Field(3, ge=0, description="Spline degree")
    u: int = Field(6, ge=1, description="Number of uniform grid intervals")
    domain: Tuple[float, float] = (-1.0, 1.0)

    @field_validator("domain")
    @classmethod
    def _ordered(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        if not value[0] < value[1]:
            raise ValueError("spline.domain must satisfy lo < hi")
        return value


class DSConvConfig(_Section):
    """Dynamic snake convolution."""

    k: int = Field(9, ge=1)
    merge: Literal["mean"] = "mean"
    offset_bias: bool = False

    @field_validator("k")
    @classmethod
    def _odd(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError("dsconv.k must be odd")
        return value


class LoASPConfig(_Section):
    """Block geometry: rank (spatial down-scaling) and hidden width."""

    r: int = Field(4, ge=1)
    c_hidden: Union[Literal["auto"], int] = "auto"
    attach: bool = True


class AblationConfig(_Section):
    """Which prior branch and which fusion the plug-in uses."""

    prior: Literal["none", "lora", "dsconv", "loasp"] = "loasp"
    fusion: Literal["add", "adapter", "loap"] = "loap"


class TrainConfig(_Section):
    """Optimizer, schedule and tuning mode."""

    epochs: int = Field(50, ge=0)
    batch_size: int = Field(32, ge=2)
    lr: float = Field(3e-3, gt=0)
    weight_decay: float = Field(1e-4, ge=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    lr_period: int = Field(100, ge=1)
    tuning: Literal["full", "low_rank"] = "full"
    low_rank_lr: float = Field(5e-4, gt=0)
    init_checkpoint: Optional[str] = None


class DataConfig(_Section):
    """Synthetic multi-domain dataset."""

    domains: List[str] = Field(default_factory=lambda: ["A", "B", "C", "D"])
    train_per_domain: int = Field(600, ge=1)
    test_per_domain: int = Field(200, ge=1)
    seed: int = Field(2024, ge=0)
    image_size: int = Field(32, ge=16, description="Training resolution; the generator draws at 64 by default")

    @field_validator("domains")
    @classmethod
    def _unique(cls, value: List[str]) -> List[str]:
        if not value or len(set(value)) != len(value):
            raise ValueError("data.domains must be a non-empty list of distinct ids")
        return value


class ProtocolConfig(_Section):
    """Evaluation protocol.

    In DG mode ``held_out`` is the test domain; in SDG mode it is the single
    training domain. ``None`` runs every domain in turn.
    """

    mode: Literal["DG", "SDG"] = "DG"
    held_out: Optional[str] = None


class VizConfig(_Section):
    """Prior-map rendering."""

    block_index: int = Field(0, ge=0)
    sigma: float = Field(1.5, gt=0)
    sample_index: int = Field(0, ge=0)
    domain: Optional[str] = None


class RunConfig(_Section):
    """Everything a command needs, assembled from file values and overrides."""

    preset: Literal["default", "grid_best"] = "grid_best"
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])
    precision: Literal["float64", "float32"] = "float64"
    workers: int = Field(1, ge=1)
    spline: SplineConfig = Field(default_factory=SplineConfig)
    dsconv: DSConvConfig = Field(default_factory=DSConvConfig)
    loasp: LoASPConfig = Field(default_factory=LoASPConfig)
    ablation: AblationConfig = Field(default_factory=AblationConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    protocol: ProtocolConfig = Field(default_factory=ProtocolConfig)
    viz: VizConfig = Field(default_factory=VizConfig)

    @model_validator(mode="after")
    def _check_protocol(self) -> "RunConfig":
        if self.protocol.mode == "DG" and len(self.data.domains) < 3:
            raise ValueError("DG mode needs at least three domains: two or more to train on and one held out")
        if self.protocol.mode == "SDG" and len(self.data.domains) < 2:
            raise ValueError("SDG mode needs at least two domains")
        if self.protocol.held_out is not None and self.protocol.held_out not in self.data.domains:
            raise ValueError(f"protocol.held_out {self.protocol.held_out!r} is not in data.domains")
        if not self.seeds:
            raise ValueError("seeds must not be empty")
        return self

    @property
    def plugged(self) -> bool:
        """Whether plug-in blocks are attached to the backbone."""
        return self.loasp.attach and self.ablation.prior != "none"


PRESETS = {
    "default": {"loasp.r": 4, "spline.p": 2, "spline.u": 3},
    "grid_best": {"loasp.r": 4, "spline.p": 3, "spline.u": 6},
}
