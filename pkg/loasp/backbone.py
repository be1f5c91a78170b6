"""Toy residual backbone the plug-in blocks attach to.

Stem (3 × 3 stride-2 convolution, BN, ReLU), four stages of two basic blocks
with widths 16/32/64/128, global average pooling and a linear head.
"""

from __future__ import annotations

import logging
from typing import List, Optional, Tuple

import numpy as np

from loasp.blocks import PluggedBlock, wrap_block
from loasp.numerics.layers import BatchNorm2d, Conv2d, Linear, Module
from loasp.numerics.tensor import Parameter, Tensor
from loasp.types.config import RunConfig
from loasp.types.errors import ConfigurationError, ShapeError

logger = logging.getLogger(__name__)

STAGE_WIDTHS = (16, 32, 64, 128)
BLOCKS_PER_STAGE = 2
NUM_CLASSES = 5


class BasicBlock(Module):
    """conv-BN-ReLU-conv-BN plus a (projected) skip, then ReLU."""

    def __init__(self, in_channels: int, out_channels: int, stride: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        self.conv1 = Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, rng=rng)
        self.bn1 = BatchNorm2d(out_channels)
        self.conv2 = Conv2d(out_channels, out_channels, 3, padding=1, rng=rng)
        self.bn2 = BatchNorm2d(out_channels)
        self.shortcut: Optional[Conv2d] = None
        self.shortcut_bn: Optional[BatchNorm2d] = None
        if stride != 1 or in_channels != out_channels:
            self.shortcut = Conv2d(in_channels, out_channels, 1, stride=stride, rng=rng)
            self.shortcut_bn = BatchNorm2d(out_channels)

    def forward(self, x: Tensor) -> Tensor:
        out = self.bn1(self.conv1(x)).relu()
        out = self.bn2(self.conv2(out))
        skip = x if self.shortcut is None else self.shortcut_bn(self.shortcut(x))
        return (out + skip).relu()


def _conv_extent(size: int, stride: int) -> int:
    return (size - 1) // stride + 1


def _block_strides() -> List[Tuple[int, int]]:
    """(width, stride) of every block in order."""
    return [
        (width, 2 if (stage > 0 and i == 0) else 1)
        for stage, width in enumerate(STAGE_WIDTHS)
        for i in range(BLOCKS_PER_STAGE)
    ]


def block_ranks(config: RunConfig, image_size: Optional[int] = None) -> List[int]:
    """Rank each plug-in actually uses: ``loasp.r`` capped by the block's input extent.

    Example:
        >>> block_ranks(RunConfig(), image_size=16)
        [4, 4, 4, 4, 2, 2, 1, 1]
    """
    size = image_size if image_size is not None else config.data.image_size
    extent = _conv_extent(size, 2)
    ranks = []
    for _, stride in _block_strides():
        ranks.append(max(1, min(config.loasp.r, extent // stride)))
        extent = _conv_extent(extent, stride)
    return ranks


class ToyResNet(Module):
    """Eight-block classifier; plug-ins wrap every block when the config asks for them.

    Args:
        config: Run configuration (ablation cell, rank, spline, snake kernel).
        seed: Seed of the weight-initialization generator.
        image_size: Input height and width, used to cap the rank per block.
    """

    def __init__(self, config: Optional[RunConfig] = None, seed: int = 0, image_size: Optional[int] = None) -> None:
        super().__init__()
        cfg = config if config is not None else RunConfig()
        rng = np.random.default_rng(seed)
        size = image_size if image_size is not None else cfg.data.image_size
        self.stem = Conv2d(3, STAGE_WIDTHS[0], 3, stride=2, padding=1, rng=rng)
        self.stem_bn = BatchNorm2d(STAGE_WIDTHS[0])

        ranks = block_ranks(cfg, size)
        if cfg.plugged and any(r != cfg.loasp.r for r in ranks):
            logger.info("rank %d capped per block to %s for %dx%d images", cfg.loasp.r, ranks, size, size)
        blocks: List[Module] = []
        in_channels = STAGE_WIDTHS[0]
        for (width, stride), r in zip(_block_strides(), ranks):
            block: Module = BasicBlock(in_channels, width, stride, rng)
            if cfg.plugged:
                block = wrap_block(block, cfg.ablation.prior, cfg.ablation.fusion, cfg, rng, r=r)
            blocks.append(block)
            in_channels = width
        self.blocks = blocks
        self.head = Linear(in_channels, NUM_CLASSES, rng)
        self.cell = f"{cfg.ablation.prior}+{cfg.ablation.fusion}" if cfg.plugged else "baseline"

    def _stem(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError("backbone expects (N, 3, H, W) images", [x.shape])
        return self.stem_bn(self.stem(x)).relu()

    def forward_until(self, x: Tensor, index: int) -> Tensor:
        """Features entering block ``index``."""
        if not 0 <= index < len(self.blocks):
            raise ConfigurationError(f"block index {index} out of range", valid=range(len(self.blocks)))
        out = self._stem(x)
        for block in self.blocks[:index]:
            out = block(out)
        return out

    def forward(self, x: Tensor) -> Tensor:
        out = self._stem(x)
        for block in self.blocks:
            out = block(out)
        pooled = out.mean(axis=(2, 3))
        return self.head(pooled)

    def plugin_parameters(self) -> List[Parameter]:
        params: List[Parameter] = []
        for block in self.blocks:
            if isinstance(block, PluggedBlock):
                params.extend(block.plugin_parameters())
        return params

    def host_parameters(self) -> List[Parameter]:
        plugin = {id(p) for p in self.plugin_parameters()}
        return [p for p in self.parameters() if id(p) not in plugin]

    def freeze_host(self) -> Tuple[int, int]:
        """Stop gradients into host weights; returns (frozen, trainable) counts."""
        for p in self.host_parameters():
            p.requires_grad = False
        frozen = sum(p.size for p in self.host_parameters())
        return frozen, self.num_parameters(trainable_only=True)
