"""Plug-and-play blocks: structural prior branches, fusions, LoRA and Adapter.

A plugged block runs its host block and a prior branch side by side::

    h = host(x)
    s = prior(x)
    out = fusion(h, s)

The canonical combination (``LoASPBlock``) uses the low-rank structural prior
(strided projection, snake convolution, projection) and the adaptive projector
fusion h' = A_c * h + h + B_f * up(spline(A_f * s)). ``wrap_block`` builds
any cell of the prior × fusion grid.
"""

from __future__ import annotations

import logging
import math
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from loasp.numerics import functional as F
from loasp.numerics.layers import BatchNorm2d, Conv2d, Module
from loasp.numerics.tensor import Parameter, Tensor
from loasp.snake_conv import DSConvModule
from loasp.spline import SplineActivation
from loasp.types.config import RunConfig
from loasp.types.errors import ConfigurationError, ShapeError, TooSmallInputError

logger = logging.getLogger(__name__)

PRIORS = ("lora", "dsconv", "loasp")
FUSIONS = ("add", "adapter", "loap")
VALID_CELLS = tuple(f"{prior}+{fusion}" for prior in PRIORS for fusion in FUSIONS)

ADAPTER_INIT_STD = 0.01


def hidden_width(channels: int, override: Union[str, int] = "auto") -> int:
    """Hidden width C_h = max(8, 4 * round(C / 48)), rounding halves up."""
    if override != "auto":
        return int(override)
    return max(8, 4 * int(math.floor(channels / 48 + 0.5)))


# ----------------------------------------------------------------------
# Prior branches


class LoSPModule(Module):
    """Low-rank structural prior: BN(B_s * dsconv(BN(A_s * x))).

    ``A_s`` is a 1 × 1 convolution whose stride is the rank times the host
    block's own stride, so the prior lives at 1/r of the host output resolution.
    """

    def __init__(
        self,
        in_channels: int,
        hidden: int,
        r: int = 4,
        host_stride: int = 1,
        k: int = 9,
        rng: Optional[np.random.Generator] = None,
        offset_bias: bool = False,
    ) -> None:
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = hidden
        self.r = r
        self.scale = r
        self.stride = r * host_stride
        self.a_s = Conv2d(in_channels, hidden, 1, stride=self.stride, rng=rng)
        self.bn_a = BatchNorm2d(hidden)
        self.dsconv = DSConvModule(hidden, hidden, k, rng=rng, offset_bias=offset_bias)
        self.b_s = Conv2d(hidden, hidden, 1, rng=rng)
        self.bn_b = BatchNorm2d(hidden)

    def forward(self, x: Tensor) -> Tensor:
        return losp_forward(x, self)


def losp_forward(x_t: Tensor, m: LoSPModule) -> Tensor:
    """Structural prior s_t of shape (N, C_h, H/r, W/r).

    Raises:
        TooSmallInputError: If H or W is smaller than the total down-scaling.
    """
    if x_t.ndim != 4 or x_t.shape[2] < m.stride or x_t.shape[3] < m.stride:
        raise TooSmallInputError(f"input is smaller than the down-scaling factor {m.stride}", [x_t.shape])
    s = m.bn_a(m.a_s(x_t))
    s = m.dsconv(s)
    return m.bn_b(m.b_s(s))


class LoRAModule(Module):
    """Low-rank update of a convolution: W_0 * x + B * (A * x).

    ``A`` copies the base kernel's size, stride and padding and maps to
    ``rank`` channels; ``B`` is a zero-initialized 1 × 1 map back to the
    output width, so a fresh module reproduces the base output exactly.

    Args:
        base: The wrapped convolution, or ``None`` for the bare B·A path.
        in_channels: Input channels (taken from ``base`` when given).
        out_channels: Output channels (taken from ``base`` when given).
        rank: Width of the low-rank bottleneck.
        kernel_size: Kernel of ``A`` when ``base`` is None.
        stride: Stride of ``A`` when ``base`` is None.
        padding: Padding of ``A`` when ``base`` is None.
        rng: Generator for the Gaussian initialization of ``A``.
        freeze_base: Exclude the base weights from training.
    """

    def __init__(
        self,
        base: Optional[Conv2d],
        in_channels: int,
        out_channels: int,
        rank: int,
        kernel_size: int = 1,
        stride: int = 1,
        padding: int = 0,
        rng: Optional[np.random.Generator] = None,
        freeze_base: bool = True,
    ) -> None:
        super().__init__()
        if base is not None:
            in_channels, out_channels = base.in_channels, base.out_channels
            kernel_size, stride, padding = base.kernel_size, base.stride, base.padding
            if freeze_base:
                base.requires_grad_(False)
        self.base = base
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.rank = rank
        self.scale = 1
        self.a = Conv2d(in_channels, rank, kernel_size, stride=stride, padding=padding, rng=rng)
        self.b = Conv2d(rank, out_channels, 1, zero_init=True)

    def forward(self, x: Tensor) -> Tensor:
        return lora_forward(x, self)

    def merged_kernel(self) -> np.ndarray:
        """Dense kernel W_0 + B·A with the base kernel's shape."""
        delta = np.einsum("or,rcij->ocij", self.b.weight.data[:, :, 0, 0], self.a.weight.data)
        if self.base is None:
            return delta
        return self.base.weight.data + delta


def lora_forward(x: Tensor, m: LoRAModule) -> Tensor:
    if x.ndim != 4 or x.shape[1] != m.in_channels:
        raise ShapeError("LoRA input channel mismatch", [x.shape, m.a.weight.shape])
    update = m.b(m.a(x))
    if m.base is None:
        return update
    return m.base(x) + update


class LoRAPrior(LoRAModule):
    """Bare B·A path used as a prior branch, at 1/r of the host resolution."""

    def __init__(
        self,
        in_channels: int,
        hidden: int,
        r: int,
        host_stride: int = 1,
        rng: Optional[np.random.Generator] = None,
    ) -> None:
        super().__init__(None, in_channels, hidden, hidden, stride=r * host_stride, rng=rng)
        self.scale = r


class DSConvPrior(Module):
    """Raw snake convolution at full resolution, subsampled to the host stride."""

    def __init__(
        self,
        in_channels: int,
        hidden: int,
        host_stride: int = 1,
        k: int = 9,
        rng: Optional[np.random.Generator] = None,
        offset_bias: bool = False,
    ) -> None:
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = hidden
        self.host_stride = host_stride
        self.scale = 1
        self.dsconv = DSConvModule(in_channels, hidden, k, rng=rng, offset_bias=offset_bias)

    def forward(self, x: Tensor) -> Tensor:
        out = self.dsconv(x)
        if self.host_stride > 1:
            out = out[:, :, :: self.host_stride, :: self.host_stride]
        return out


# ----------------------------------------------------------------------
# Fusions


def _resize(delta: Tensor, target: Tuple[int, ...], scale: int) -> Tensor:
    """Nearest-upsample by ``scale`` and center-crop or pad to ``target``'s extent."""
    up = F.nearest_upsample(delta, scale)
    height, width = target[2], target[3]
    tolerance = max(scale - 1, 0)
    if abs(up.shape[2] - height) > tolerance or abs(up.shape[3] - width) > tolerance:
        raise ShapeError("prior resolution cannot be matched to the host output", [up.shape, target])
    return F.match_spatial(up, height, width)


def adapter_forward(h: Tensor, m: "AdapterModule") -> Tensor:
    """h + B * relu(A * h)."""
    return h + m.bottleneck(h)


class AdapterModule(Module):
    """Serial residual bottleneck h + B * relu(A * h) with near-zero weights."""

    def __init__(
        self,
        in_channels: int,
        bottleneck: int,
        out_channels: Optional[int] = None,
        rng: Optional[np.random.Generator] = None,
        init_std: float = ADAPTER_INIT_STD,
    ) -> None:
        super().__init__()
        out_channels = in_channels if out_channels is None else out_channels
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.a = Conv2d(in_channels, bottleneck, 1, rng=rng, init_std=init_std)
        self.b = Conv2d(bottleneck, out_channels, 1, rng=rng, init_std=init_std)

    def bottleneck(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError("adapter input channel mismatch", [x.shape, self.a.weight.shape])
        return self.b(self.a(x).relu())

    def forward(self, h: Tensor) -> Tensor:
        return adapter_forward(h, self)


class AddFusion(Module):
    """h + resize(P s) with a fixed identity-like channel map P (no parameters)."""

    def __init__(self, hidden: int, channels: int, scale: int) -> None:
        super().__init__()
        self.scale = scale
        self.projection = np.eye(channels, hidden)

    def project(self, s: Tensor, target: Tuple[int, ...]) -> Tensor:
        mapped = F.einsum("oc,nchw->nohw", F.constant(self.projection), s)
        return _resize(mapped, target, self.scale)

    def forward(self, h: Tensor, s: Tensor) -> Tensor:
        return h + self.project(s, h.shape)


class AdapterFusion(Module):
    """h + resize(B * relu(A * s)): the adapter bottleneck applied to the prior."""

    def __init__(
        self, hidden: int, channels: int, scale: int, rng: Optional[np.random.Generator] = None
    ) -> None:
        super().__init__()
        self.scale = scale
        self.adapter = AdapterModule(hidden, hidden, channels, rng=rng)

    def project(self, s: Tensor, target: Tuple[int, ...]) -> Tensor:
        return _resize(self.adapter.bottleneck(s), target, self.scale)

    def forward(self, h: Tensor, s: Tensor) -> Tensor:
        return h + self.project(s, h.shape)


class LoAPModule(Module):
    """Adaptive projector B_f * up(spline(A_f * s), r) with zero-initialized B_f."""

    def __init__(
        self,
        hidden: int,
        channels: int,
        r: int = 4,
        p: int = 3,
        u: int = 6,
        domain: Tuple[float, float] = (-1.0, 1.0),
        rng: Optional[np.random.Generator] = None,
    ) -> None:
        super().__init__()
        self.r = r
        self.a_f = Conv2d(hidden, hidden, 1, rng=rng)
        self.spline = SplineActivation(hidden, p, u, domain)
        self.b_f = Conv2d(hidden, channels, 1, zero_init=True)

    def forward(self, s: Tensor) -> Tensor:
        return loap_forward(s, self, self.r)


def loap_forward(
    s_t: Tensor, m: LoAPModule, r: int, target: Optional[Sequence[int]] = None
) -> Tensor:
    """Up-scaled prior s_t'.

    ``B_f`` is applied before the nearest upsample; a 1 × 1 convolution
    commutes with pixel replication, so the result is the same.

    Args:
        s_t: Prior of shape (N, C_h, h, w).
        m: The projector.
        r: Upsampling factor.
        target: Optional (N, C, H, W) to center-crop or pad to.
    """
    projected = m.b_f(m.spline(m.a_f(s_t)))
    if target is None:
        return F.nearest_upsample(projected, r)
    return _resize(projected, tuple(target), r)


def loasp_fuse(h_t: Tensor, s_prime: Tensor, a_c: Conv2d) -> Tensor:
    """(A_c * h_t) + h_t + s_t'."""
    if h_t.shape != s_prime.shape:
        raise ShapeError("fusion operands differ in shape", [h_t.shape, s_prime.shape])
    return a_c(h_t) + h_t + s_prime


class LoAPFusion(Module):
    """Adaptive projector followed by the refining depthwise convolution A_c."""

    def __init__(
        self,
        hidden: int,
        channels: int,
        scale: int,
        p: int = 3,
        u: int = 6,
        domain: Tuple[float, float] = (-1.0, 1.0),
        rng: Optional[np.random.Generator] = None,
    ) -> None:
        super().__init__()
        self.scale = scale
        self.loap = LoAPModule(hidden, channels, scale, p, u, domain, rng=rng)
        self.a_c = Conv2d(channels, channels, 3, padding=1, groups=channels, zero_init=True)

    def project(self, s: Tensor, target: Tuple[int, ...]) -> Tensor:
        return loap_forward(s, self.loap, self.scale, target)

    def forward(self, h: Tensor, s: Tensor) -> Tensor:
        return loasp_fuse(h, self.project(s, h.shape), self.a_c)


# ----------------------------------------------------------------------
# Wrapped blocks


class PluggedBlock(Module):
    """A host block with a prior branch and a fusion attached.

    Attributes:
        host: The wrapped block; exposes ``in_channels``, ``out_channels``, ``stride``.
        prior: Branch computing s from the block input.
        fusion: Combines the host output with the prior.
        cell: ``"<prior>+<fusion>"`` name of the combination.
    """

    def __init__(self, host: Module, prior: Module, fusion: Module, cell: str) -> None:
        super().__init__()
        self.host = host
        self.prior = prior
        self.fusion = fusion
        self.cell = cell
        self.in_channels = host.in_channels
        self.out_channels = host.out_channels
        self.stride = host.stride

    def forward(self, x: Tensor) -> Tensor:
        h = self.host(x)
        return self.fusion(h, self.prior(x))

    def prior_output(self, x: Tensor) -> Tensor:
        """The projected prior just before it is added to the host output."""
        h = self.host(x)
        return self.fusion.project(self.prior(x), h.shape)

    def plugin_parameters(self) -> List[Parameter]:
        return self.prior.parameters() + self.fusion.parameters()


class LoASPBlock(PluggedBlock):
    """Structural prior + adaptive projector around a host block.

    Freshly constructed, the block returns exactly the host output: ``B_f``
    and ``A_c`` start at zero.
    """

    def __init__(
        self,
        host: Module,
        r: int = 4,
        hidden: Optional[int] = None,
        k: int = 9,
        p: int = 3,
        u: int = 6,
        domain: Tuple[float, float] = (-1.0, 1.0),
        rng: Optional[np.random.Generator] = None,
        offset_bias: bool = False,
    ) -> None:
        width = hidden if hidden is not None else hidden_width(host.out_channels)
        prior = LoSPModule(host.in_channels, width, r, host.stride, k, rng=rng, offset_bias=offset_bias)
        fusion = LoAPFusion(width, host.out_channels, r, p, u, domain, rng=rng)
        super().__init__(host, prior, fusion, "loasp+loap")
        self.r = r
        self.hidden = width

    @property
    def losp(self) -> LoSPModule:
        return self.prior

    @property
    def loap(self) -> LoAPModule:
        return self.fusion.loap

    @property
    def a_c(self) -> Conv2d:
        return self.fusion.a_c


def wrap_block(
    host_block: Module,
    prior: str,
    fusion: str,
    config: Optional[RunConfig] = None,
    rng: Optional[np.random.Generator] = None,
    r: Optional[int] = None,
) -> PluggedBlock:
    """Attach one prior × fusion cell to ``host_block``.

    Args:
        host_block: Block exposing ``in_channels``, ``out_channels`` and ``stride``.
        prior: ``lora``, ``dsconv`` or ``loasp``.
        fusion: ``add``, ``adapter`` or ``loap``.
        config: Run configuration supplying r, hidden width, k and spline settings.
        rng: Generator for weight initialization.
        r: Rank override; defaults to ``config.loasp.r``.

    Returns:
        The wrapped block; ``(loasp, loap)`` gives a ``LoASPBlock``.

    Raises:
        ConfigurationError: If the combination is not one of the nine cells.
    """
    cell = f"{prior}+{fusion}"
    if cell not in VALID_CELLS:
        raise ConfigurationError(f"unknown ablation cell {cell!r}", valid=VALID_CELLS)
    cfg = config if config is not None else RunConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    r = cfg.loasp.r if r is None else r
    width = hidden_width(host_block.out_channels, cfg.loasp.c_hidden)
    k = cfg.dsconv.k
    spline = cfg.spline
    bias = cfg.dsconv.offset_bias

    if cell == "loasp+loap":
        return LoASPBlock(
            host_block, r, width, k, spline.p, spline.u, spline.domain, rng=rng, offset_bias=bias
        )

    if prior == "lora":
        branch: Module = LoRAPrior(host_block.in_channels, width, r, host_block.stride, rng=rng)
    elif prior == "dsconv":
        branch = DSConvPrior(host_block.in_channels, width, host_block.stride, k, rng=rng, offset_bias=bias)
    else:
        branch = LoSPModule(host_block.in_channels, width, r, host_block.stride, k, rng=rng, offset_bias=bias)

    scale = branch.scale
    channels = host_block.out_channels
    if fusion == "add":
        merge: Module = AddFusion(width, channels, scale)
    elif fusion == "adapter":
        merge = AdapterFusion(width, channels, scale, rng=rng)
    else:
        merge = LoAPFusion(width, channels, scale, spline.p, spline.u, spline.domain, rng=rng)
    logger.debug("wrapped %s block (C=%d, C_h=%d, r=%d)", cell, channels, width, r)
    return PluggedBlock(host_block, branch, merge, cell)
