"""Type definitions for loasp."""

from loasp.types.errors import (
    LoASPError,
    ContractViolation,
    ShapeError,
    TooSmallInputError,
    DegenerateBatchError,
    NumericFailureError,
    ConfigurationError,
    UnsupportedInitError,
    CheckpointFormatError,
    exit_code_for,
)
from loasp.types.config import (
    SplineConfig,
    DSConvConfig,
    LoASPConfig,
    AblationConfig,
    TrainConfig,
    DataConfig,
    ProtocolConfig,
    VizConfig,
    RunConfig,
    PRESETS,
)
from loasp.types.spline import KnotVector
from loasp.types.accounting import (
    BlockShape,
    ComponentCost,
    EfficiencyCheck,
    CostReport,
)
from loasp.types.data import (
    LesionInventory,
    DomainSpec,
    SyntheticSample,
    Split,
)
from loasp.types.metrics import (
    DomainMetrics,
    MetricsRow,
    RunReport,
    MetricsReport,
    CellSummary,
    GridRow,
)

__all__ = [
    # Errors
    "LoASPError",
    "ContractViolation",
    "ShapeError",
    "TooSmallInputError",
    "DegenerateBatchError",
    "NumericFailureError",
    "ConfigurationError",
    "UnsupportedInitError",
    "CheckpointFormatError",
    "exit_code_for",
    # Config
    "SplineConfig",
    "DSConvConfig",
    "LoASPConfig",
    "AblationConfig",
    "TrainConfig",
    "DataConfig",
    "ProtocolConfig",
    "VizConfig",
    "RunConfig",
    "PRESETS",
    # Spline
    "KnotVector",
    # Accounting
    "BlockShape",
    "ComponentCost",
    "EfficiencyCheck",
    "CostReport",
    # Data
    "LesionInventory",
    "DomainSpec",
    "SyntheticSample",
    "Split",
    # Metrics
    "DomainMetrics",
    "MetricsRow",
    "RunReport",
    "MetricsReport",
    "CellSummary",
    "GridRow",
]
