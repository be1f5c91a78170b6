"""Dense-array autodiff engine, layers and optimizer."""

from loasp.numerics.tensor import (
    Parameter,
    Tensor,
    as_tensor,
    get_default_dtype,
    is_grad_enabled,
    no_grad,
    set_default_dtype,
)
from loasp.numerics.functional import (
    batch_norm,
    bilinear_gather,
    bilinear_sample,
    conv2d,
    cross_entropy,
    einsum,
    match_spatial,
    nearest_upsample,
    softmax,
)
from loasp.numerics.layers import BatchNorm2d, Conv2d, Identity, Linear, Module
from loasp.numerics.optim import AdamW, OptimizerState, adamw_step, step_lr
from loasp.numerics.gradcheck import check_gradient, finite_difference_grad, relative_error

__all__ = [
    # Tensor
    "Tensor",
    "Parameter",
    "as_tensor",
    "no_grad",
    "is_grad_enabled",
    "set_default_dtype",
    "get_default_dtype",
    # Operations
    "conv2d",
    "batch_norm",
    "bilinear_gather",
    "bilinear_sample",
    "nearest_upsample",
    "match_spatial",
    "cross_entropy",
    "softmax",
    "einsum",
    # Layers
    "Module",
    "Identity",
    "Conv2d",
    "BatchNorm2d",
    "Linear",
    # Optimization
    "AdamW",
    "OptimizerState",
    "adamw_step",
    "step_lr",
    # Gradient checking
    "finite_difference_grad",
    "relative_error",
    "check_gradient",
]
