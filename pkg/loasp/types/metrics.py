"""Training and evaluation report types."""

from typing import List, Optional

from pydantic import BaseModel, Field

from loasp.types.data import Split


class DomainMetrics(BaseModel):
    """Scores on one test domain (``domain="mean"`` for the average row)."""

    domain: str
    acc: float = Field(ge=0, le=1)
    macro_f1: float = Field(ge=0, le=1)
    macro_auc: float = Field(ge=0, le=1)


class MetricsRow(BaseModel):
    """One line of the metrics CSV."""

    run_id: str
    seed: int
    protocol: str
    held_out: str
    epoch: int
    split: str
    acc: Optional[float] = None
    macro_f1: Optional[float] = None
    macro_auc: Optional[float] = None
    loss: Optional[float] = None


class RunReport(BaseModel):
    """Outcome of one (seed, protocol instance) training run."""

    run_id: str
    seed: int
    cell: str
    split: Split
    losses: List[float] = Field(default_factory=list)
    test: List[DomainMetrics] = Field(default_factory=list)
    mean: Optional[DomainMetrics] = None
    checkpoint: Optional[str] = None


class MetricsReport(BaseModel):
    """All runs of one command with their CSV rows."""

    cell: str
    runs: List[RunReport] = Field(default_factory=list)
    rows: List[MetricsRow] = Field(default_factory=list)

    def mean_acc(self, held_out: Optional[str] = None) -> float:
        """Mean test accuracy over runs, optionally for one held-out domain."""
        values = [
            run.mean.acc
            for run in self.runs
            if run.mean is not None and (held_out is None or run.split.held_out == held_out)
        ]
        return sum(values) / len(values) if values else 0.0


class CellSummary(BaseModel):
    """Mean held-out scores of one ablation cell over all its runs."""

    cell: str
    prior: str
    fusion: str
    runs: int
    acc: float
    macro_f1: float
    macro_auc: float


class GridRow(BaseModel):
    """One point of the one-at-a-time r/p/u sweep."""

    parameter: str
    value: int
    effective_r: List[int] = Field(default_factory=list, description="Rank each block used after the input-size cap")
    acc: float
    macro_f1: float
    macro_auc: float
