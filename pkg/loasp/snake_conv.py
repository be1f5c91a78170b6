"""Dynamic snake convolution.

Each axis kernel is a 1 × k (x-axis) or k × 1 (y-axis) filter whose taps are
displaced perpendicular to the kernel axis. A 3 × 3 convolution predicts one
bounded step per tap, and the steps are accumulated outward from the center
tap, so neighbouring taps never drift more than one pixel apart and the
sampled path stays connected.
"""

from __future__ import annotations

import logging
from typing import Literal, Optional, Union

import numpy as np

from loasp.numerics import functional as F
from loasp.numerics.layers import Conv2d, Module, gaussian_fan_in
from loasp.numerics.tensor import Parameter, Tensor, as_tensor
from loasp.types.errors import ContractViolation, ShapeError

logger = logging.getLogger(__name__)

Axis = Literal["x", "y"]


def _check_odd(k: int) -> None:
    if k < 1 or k % 2 == 0:
        raise ContractViolation(f"snake kernel length must be odd and positive, got {k}")


class SnakeKernel(Module):
    """One axis of a snake convolution: weights W_s and the offset predictor.

    The predictor has no bias unless ``offset_bias`` is set, so a fresh kernel
    contributes exactly ``9·C_in·k`` predictor weights. With ``offset_bias`` the
    bias starts at zero and can be forced (for example to +10) to saturate the
    tanh steps; ``dsconv.offset_bias=true`` turns it on from the run config.

    Args:
        axis: ``"x"`` for a horizontal kernel, ``"y"`` for a vertical one.
        in_channels: Input channels.
        out_channels: Output channels.
        k: Odd kernel length.
        rng: Generator for the Gaussian weight initialization.
        offset_bias: Give the offset predictor a (zero-initialized) bias.
    """

    def __init__(
        self,
        axis: Axis,
        in_channels: int,
        out_channels: int,
        k: int = 9,
        rng: Optional[np.random.Generator] = None,
        offset_bias: bool = False,
    ) -> None:
        super().__init__()
        _check_odd(k)
        if axis not in ("x", "y"):
            raise ContractViolation(f"axis must be 'x' or 'y', got {axis!r}")
        if rng is None:
            raise ContractViolation("SnakeKernel needs an rng")
        self.axis = axis
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.k = k
        self.weight = Parameter(
            gaussian_fan_in(rng, (out_channels, in_channels, k), fan_in=in_channels * k)
        )
        self.offset_conv = Conv2d(in_channels, k, kernel_size=3, padding=1, bias=offset_bias, zero_init=True)

    @property
    def center(self) -> int:
        return (self.k - 1) // 2


class DSConvModule(Module):
    """Two snake kernels (x and y axis) whose outputs are averaged."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        k: int = 9,
        rng: Optional[np.random.Generator] = None,
        offset_bias: bool = False,
        merge: Literal["mean"] = "mean",
    ) -> None:
        super().__init__()
        if merge != "mean":
            raise ContractViolation(f"unsupported merge rule {merge!r}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.k = k
        self.merge = merge
        self.kernel_x = SnakeKernel("x", in_channels, out_channels, k, rng, offset_bias)
        self.kernel_y = SnakeKernel("y", in_channels, out_channels, k, rng, offset_bias)

    def forward(self, x: Tensor) -> Tensor:
        return dsconv_forward(x, self)


def predict_offsets(input: Tensor, kernel: SnakeKernel) -> Tensor:
    """Per-position, per-tap steps tanh(offset_conv(input)), shape (N, k, H, W)."""
    if input.ndim != 4 or input.shape[1] != kernel.in_channels:
        raise ShapeError("offset predictor channel mismatch", [input.shape, kernel.offset_conv.weight.shape])
    return kernel.offset_conv(input).tanh()


def accumulation_matrix(k: int) -> np.ndarray:
    """0/1 matrix M with xi = M @ delta: M[i, j] = 1 for c < j <= i or i <= j < c."""
    _check_odd(k)
    c = (k - 1) // 2
    i = np.arange(k)[:, None]
    j = np.arange(k)[None, :]
    return (((c < j) & (j <= i)) | ((i <= j) & (j < c))).astype(np.float64)


def accumulate_offsets(deltas: Union[Tensor, np.ndarray], axis: Optional[int] = None) -> Tensor:
    """Outward cumulative sums of per-tap steps; the center tap stays at 0.

    Args:
        deltas: Steps with the tap index on ``axis``.
        axis: Tap axis; defaults to 1 for 4-d fields (N, k, H, W), else 0.

    Returns:
        Tensor of offsets xi with the same shape as ``deltas``.

    Raises:
        ContractViolation: If the tap count is even.

    Example:
        >>> accumulate_offsets(np.full(5, 0.5)).data
        array([1. , 0.5, 0. , 0.5, 1. ])
    """
    steps = as_tensor(deltas)
    if axis is None:
        axis = 1 if steps.ndim == 4 else 0
    k = steps.shape[axis]
    matrix = F.constant(accumulation_matrix(k))
    letters = "abcdefgh"[: steps.ndim]
    source = letters[:axis] + "j" + letters[axis + 1 :]
    target = letters[:axis] + "i" + letters[axis + 1 :]
    return F.einsum(f"ij,{source}->{target}", matrix, steps)


def snake_conv_axis(input: Tensor, kernel: SnakeKernel, offsets: Tensor) -> Tensor:
    """Convolve along one axis with taps displaced by ``offsets``.

    For the x-axis kernel, tap i of output (y, x) samples the input at
    (y + xi_i(y, x), x + i - c); the y-axis kernel swaps the roles. Sampling is
    bilinear with border clamping, which gives same-size output.

    Args:
        input: Tensor (N, C_in, H, W).
        kernel: The axis kernel.
        offsets: Accumulated offsets xi, shape (N, k, H, W).

    Returns:
        Tensor (N, C_out, H, W).
    """
    if input.ndim != 4 or input.shape[1] != kernel.in_channels:
        raise ShapeError("snake kernel channel mismatch", [input.shape, kernel.weight.shape])
    n, _, h, w = input.shape
    k = kernel.k
    if offsets.shape != (n, k, h, w):
        raise ShapeError("offsets must have shape (N, k, H, W)", [offsets.shape, (n, k, h, w)])
    taps = (np.arange(k) - kernel.center).reshape(1, k, 1, 1)
    grid_rows = np.arange(h, dtype=np.float64).reshape(1, 1, h, 1)
    grid_cols = np.arange(w, dtype=np.float64).reshape(1, 1, 1, w)
    shape = (n, k, h, w)
    if kernel.axis == "x":
        rows = offsets + F.constant(np.broadcast_to(grid_rows, shape))
        cols = F.constant(np.broadcast_to(grid_cols + taps, shape))
    else:
        rows = F.constant(np.broadcast_to(grid_rows + taps, shape))
        cols = offsets + F.constant(np.broadcast_to(grid_cols, shape))
    sampled = F.bilinear_gather(input, rows, cols)
    return F.einsum("nckhw,ock->nohw", sampled, kernel.weight)


def dsconv_forward(input: Tensor, module: DSConvModule) -> Tensor:
    """Mean of the x-axis and y-axis snake convolutions."""
    outputs = []
    for kernel in (module.kernel_x, module.kernel_y):
        offsets = accumulate_offsets(predict_offsets(input, kernel))
        outputs.append(snake_conv_axis(input, kernel, offsets))
    return (outputs[0] + outputs[1]) * 0.5
