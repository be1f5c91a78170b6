"""Analytic FLOP and parameter counts for the plug-in blocks.

``proj_flops``, ``spline_flops`` and ``loasp_flops`` are the closed-form cost
expressions; ``count_added_params`` enumerates the concrete layer inventory of
a ``LoASPBlock`` per catalog entry, so its totals can be compared exactly with
an instantiated block.
"""

from __future__ import annotations

import csv
import io
import logging
from typing import Iterable, List, Optional, Sequence, TextIO

from loasp.blocks import hidden_width
from loasp.types.accounting import BlockShape, ComponentCost, CostReport, EfficiencyCheck
from loasp.types.config import RunConfig
from loasp.types.errors import ContractViolation

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("block_id", "channels", "component", "params", "flops")
COMPONENTS = ("A_s", "dsconv", "B_s", "A_f", "spline", "B_f", "A_c", "bn")
OFFSET_KERNEL = 3


def _reduced(extent: int, r: int) -> int:
    return max(1, extent // r)


def proj_flops(K: int, C_in: int, C_out: int, H: int, W: int, r: int) -> int:
    """K² · C_in · C_out · (H/r) · (W/r), each spatial quotient floored (minimum 1).

    Raises:
        ContractViolation: If ``r < 1``.
    """
    if r < 1:
        raise ContractViolation(f"rank must be >= 1, got {r}")
    return K * K * C_in * C_out * _reduced(H, r) * _reduced(W, r)


def spline_flops(H: int, W: int, p: int, u: int) -> int:
    """H · W · (p + 1) · u."""
    return H * W * (p + 1) * u


def loasp_flops(K: int, C_in: int, C_out: int, H: int, W: int, r: int) -> int:
    """The aggregate bound 5 · O_proj."""
    return 5 * proj_flops(K, C_in, C_out, H, W, r)


def baseline_flops(shape: BlockShape) -> int:
    """One K × K convolution at full resolution."""
    return shape.K * shape.K * shape.C_in * shape.C_out * shape.H * shape.W


def resnet50_catalog() -> List[BlockShape]:
    """Output widths and extents of the 16 bottleneck blocks of ResNet-50."""
    return [
        BlockShape(K=3, C_in=256, C_out=256, H=56, W=56, count=3),
        BlockShape(K=3, C_in=512, C_out=512, H=28, W=28, count=4),
        BlockShape(K=3, C_in=1024, C_out=1024, H=14, W=14, count=6),
        BlockShape(K=3, C_in=2048, C_out=2048, H=7, W=7, count=3),
    ]


def block_costs(shape: BlockShape, block_id: int, config: RunConfig) -> List[ComponentCost]:
    """Parameters and FLOPs of every component of one plug-in block."""
    r = config.loasp.r
    k = config.dsconv.k
    p, u = config.spline.p, config.spline.u
    c_in, c_out = shape.C_in, shape.C_out
    c_h = hidden_width(c_out, config.loasp.c_hidden)
    h, w = _reduced(shape.H, r), _reduced(shape.W, r)
    low = h * w
    offset_bias = 2 * k if config.dsconv.offset_bias else 0
    offset_params = 2 * OFFSET_KERNEL * OFFSET_KERNEL * c_h * k

    inventory = {
        "A_s": (c_in * c_h, proj_flops(1, c_in, c_h, shape.H, shape.W, r)),
        "dsconv": (2 * k * c_h * c_h + offset_params + offset_bias, (2 * k * c_h * c_h + offset_params) * low),
        "B_s": (c_h * c_h, c_h * c_h * low),
        "A_f": (c_h * c_h, c_h * c_h * low),
        "spline": ((u + p) * c_h, c_h * spline_flops(h, w, p, u)),
        "B_f": (c_h * c_out, c_h * c_out * low),
        "A_c": (9 * c_out, 9 * c_out * shape.H * shape.W),
        "bn": (4 * c_h, 4 * c_h * low),
    }
    return [
        ComponentCost(block_id=block_id, channels=c_out, component=name, params=params, flops=flops)
        for name, (params, flops) in inventory.items()
    ]


def efficiency_checks(catalog: Sequence[BlockShape], r_values: Iterable[int]) -> List[EfficiencyCheck]:
    """loasp_flops against the single-convolution baseline for each entry and rank."""
    checks = []
    for r in r_values:
        for index, shape in enumerate(catalog):
            checks.append(
                EfficiencyCheck(
                    block_id=index,
                    r=r,
                    loasp_flops=loasp_flops(shape.K, shape.C_in, shape.C_out, shape.H, shape.W, r),
                    baseline_flops=baseline_flops(shape),
                )
            )
    return checks


def count_added_params(
    catalog: Sequence[BlockShape],
    config: Optional[RunConfig] = None,
    r_values: Sequence[int] = (3, 4, 8),
) -> CostReport:
    """Enumerate the added parameters and FLOPs over a block catalog.

    Entries with ``count > 1`` expand to that many blocks with consecutive ids.

    Args:
        catalog: Block shapes.
        config: Rank, hidden width, snake kernel and spline settings.
        r_values: Ranks for the efficiency check attached to the report.

    Returns:
        CostReport with one row per (block, component).

    Raises:
        ContractViolation: If the catalog is empty.

    Example:
        >>> report = count_added_params(resnet50_catalog())
        >>> report.total_params
        6513048
    """
    if not catalog:
        raise ContractViolation("catalog must contain at least one block")
    cfg = config if config is not None else RunConfig()
    rows: List[ComponentCost] = []
    bound = 0
    baseline = 0
    block_id = 0
    for shape in catalog:
        for _ in range(shape.count):
            rows.extend(block_costs(shape, block_id, cfg))
            block_id += 1
        bound += shape.count * loasp_flops(shape.K, shape.C_in, shape.C_out, shape.H, shape.W, cfg.loasp.r)
        baseline += shape.count * baseline_flops(shape)
    report = CostReport(
        rows=rows,
        total_params=sum(row.params for row in rows),
        total_flops=sum(row.flops for row in rows),
        bound_flops=bound,
        baseline_flops=baseline,
        efficiency=efficiency_checks(catalog, r_values),
    )
    logger.info(
        "%d blocks: %d added parameters, %d FLOPs (5x bound %d)",
        block_id,
        report.total_params,
        report.total_flops,
        report.bound_flops,
    )
    return report


def write_cost_csv(report: CostReport, stream: TextIO) -> None:
    """Rows per (block, component), then a ``total`` row."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in report.rows:
        writer.writerow([row.block_id, row.channels, row.component, row.params, row.flops])
    writer.writerow(["total", "", "all", report.total_params, report.total_flops])


def cost_csv(report: CostReport) -> str:
    buffer = io.StringIO()
    write_cost_csv(report, buffer)
    return buffer.getvalue()
