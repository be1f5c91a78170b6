"""LoASP plug-and-play blocks.

A low-rank structural prior (dynamic snake convolution at reduced
resolution) and a low-rank adaptive B-spline projector, fused residually
into a host convolutional block. Ships with LoRA, Adapter and ADD
baselines, parameter/FLOP accounting and a synthetic domain-generalization
harness.

Example:
    >>> from loasp import RunConfig, ToyResNet, wrap_block
    >>> model = ToyResNet(RunConfig(), seed=0)
    >>> model.cell
    'loasp+loap'
"""

from loasp.version import __version__
from loasp.blocks import LoASPBlock, PluggedBlock, hidden_width, wrap_block
from loasp.backbone import ToyResNet
from loasp.accounting import count_added_params, resnet50_catalog
from loasp._config import build_run_config, get_output_root, load_config_file
from loasp.types import (
    # Errors
    LoASPError,
    ContractViolation,
    ShapeError,
    TooSmallInputError,
    DegenerateBatchError,
    NumericFailureError,
    ConfigurationError,
    UnsupportedInitError,
    CheckpointFormatError,
    # Config
    RunConfig,
    SplineConfig,
    DSConvConfig,
    LoASPConfig,
    AblationConfig,
    TrainConfig,
    DataConfig,
    ProtocolConfig,
    VizConfig,
    # Reports
    CostReport,
    MetricsReport,
)

__all__ = [
    "__version__",
    # Blocks
    "LoASPBlock",
    "PluggedBlock",
    "wrap_block",
    "hidden_width",
    "ToyResNet",
    # Accounting
    "count_added_params",
    "resnet50_catalog",
    # Config
    "build_run_config",
    "load_config_file",
    "get_output_root",
    "RunConfig",
    "SplineConfig",
    "DSConvConfig",
    "LoASPConfig",
    "AblationConfig",
    "TrainConfig",
    "DataConfig",
    "ProtocolConfig",
    "VizConfig",
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
    # Reports
    "CostReport",
    "MetricsReport",
]
