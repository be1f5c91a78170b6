"""Evaluation from checkpoints, the priors × fusion ablation and the r/p/u sweep."""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from pydantic import ValidationError

from loasp._checkpoint import load_checkpoint
from loasp.backbone import block_ranks
from loasp.blocks import FUSIONS, PRIORS
from loasp.harness.protocol import protocol_instances
from loasp.harness.trainer import (
    CHECKPOINT_NAME,
    PathLike,
    build_model,
    cell_name,
    evaluate_model,
    load_split,
    row_base,
    run_id_for,
    held_out_rows,
    train,
    use_precision,
)
from loasp.types.config import AblationConfig, RunConfig
from loasp.types.errors import ConfigurationError, ContractViolation
from loasp.types.metrics import CellSummary, GridRow, MetricsReport, RunReport

logger = logging.getLogger(__name__)

ABLATION_COLUMNS = ("cell", "prior", "fusion", "runs", "acc", "macro_f1", "macro_auc")
GRID_COLUMNS = ("parameter", "value", "effective_r", "acc", "macro_f1", "macro_auc")
GRID_KEYS = {"r": ("loasp", "r"), "p": ("spline", "p"), "u": ("spline", "u")}


def evaluate(config: RunConfig, run_dir: PathLike, cache_dir: Optional[PathLike] = None) -> MetricsReport:
    """Re-score saved checkpoints on the protocol's test domains without training.

    Args:
        config: The configuration the checkpoints were trained with.
        run_dir: Directory holding ``<run_id>/model.ckpt`` per run.
        cache_dir: Dataset cache.

    Raises:
        CheckpointFormatError: If a run's checkpoint is missing or malformed.
    """
    report = MetricsReport(cell=cell_name(config))
    eval_config = config.model_copy(update={"train": config.train.model_copy(update={"tuning": "full"})})
    with use_precision(config.precision):
        for split in protocol_instances(config.data.domains, config.protocol.mode, config.protocol.held_out):
            _, test_sets = load_split(config, split, cache_dir)
            for seed in config.seeds:
                run_id = run_id_for(config, split, seed)
                path = Path(run_dir) / run_id / CHECKPOINT_NAME
                model = build_model(eval_config, seed)
                model.load_state_dict(load_checkpoint(path))
                per_domain, mean = evaluate_model(model, test_sets, config.train.batch_size)
                report.runs.append(
                    RunReport(
                        run_id=run_id, seed=seed, cell=model.cell, split=split,
                        test=per_domain, mean=mean, checkpoint=str(path),
                    )
                )
                report.rows.extend(held_out_rows(row_base(run_id, seed, split), 0, per_domain + [mean]))
                logger.info("eval %s: mean acc %.3f", run_id, mean.acc)
    return report


def summarize(report: MetricsReport, prior: str, fusion: str) -> CellSummary:
    scored = [run.mean for run in report.runs if run.mean is not None]
    count = len(scored)

    def avg(values: Sequence[float]) -> float:
        return sum(values) / count if count else 0.0

    return CellSummary(
        cell=report.cell,
        prior=prior,
        fusion=fusion,
        runs=count,
        acc=avg([m.acc for m in scored]),
        macro_f1=avg([m.macro_f1 for m in scored]),
        macro_auc=avg([m.macro_auc for m in scored]),
    )


def ablation_cells(include_baseline: bool = True) -> List[Tuple[str, str]]:
    """``(prior, fusion)`` pairs: the plain backbone first, then the nine plug-in cells."""
    cells = [("none", "loap")] if include_baseline else []
    cells.extend((prior, fusion) for prior in PRIORS for fusion in FUSIONS)
    return cells


def _cell_config(config: RunConfig, prior: str, fusion: str) -> RunConfig:
    return config.model_copy(update={"ablation": AblationConfig(prior=prior, fusion=fusion)}, deep=True)


def _run_job(job: Tuple[RunConfig, Optional[str], Optional[str]]) -> MetricsReport:
    config, output_dir, cache_dir = job
    return train(config, output_dir=output_dir, cache_dir=cache_dir)


def _run_all(
    configs: List[RunConfig],
    names: List[str],
    output_dir: Optional[PathLike],
    cache_dir: Optional[PathLike],
    workers: int,
) -> List[MetricsReport]:
    jobs = []
    for cfg, name in zip(configs, names):
        target = str(Path(output_dir) / name) if output_dir is not None else None
        jobs.append((cfg, target, str(cache_dir) if cache_dir is not None else None))
    if workers > 1 and len(jobs) > 1:
        if cache_dir is not None:
            # fill the cache once so workers only read it
            first = configs[0]
            for split in protocol_instances(first.data.domains, first.protocol.mode, first.protocol.held_out):
                load_split(first, split, cache_dir)
        serial = [(cfg.model_copy(update={"workers": 1}), out, cache) for cfg, out, cache in jobs]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_job, serial))
    return [_run_job(job) for job in jobs]


def ablate(
    config: RunConfig,
    output_dir: Optional[PathLike] = None,
    cache_dir: Optional[PathLike] = None,
    include_baseline: bool = True,
) -> Tuple[List[CellSummary], Dict[str, MetricsReport]]:
    """Train the nine priors × fusion cells (and the plain backbone) under one protocol.

    Each cell writes to ``<output_dir>/<cell>/``. Cells run in ``config.workers``
    processes; results do not depend on the worker count.

    Returns:
        One summary per cell, in grid order, and the full report per cell name.
    """
    cells = ablation_cells(include_baseline)
    configs = [_cell_config(config, prior, fusion) for prior, fusion in cells]
    names = [cell_name(cfg) for cfg in configs]
    reports = _run_all(configs, names, output_dir, cache_dir, config.workers)
    summaries = [summarize(report, prior, fusion) for report, (prior, fusion) in zip(reports, cells)]
    for s in summaries:
        logger.info("ablation %-16s acc %.3f  f1 %.3f  auc %.3f", s.cell, s.acc, s.macro_f1, s.macro_auc)
    return summaries, dict(zip(names, reports))


def run_grid(
    config: RunConfig,
    r_values: Optional[Sequence[int]] = None,
    p_values: Optional[Sequence[int]] = None,
    u_values: Optional[Sequence[int]] = None,
    output_dir: Optional[PathLike] = None,
    cache_dir: Optional[PathLike] = None,
) -> List[GridRow]:
    """One-at-a-time sweep of r, p and u around ``config``.

    Each value is a full ``train`` run with only that parameter changed. A
    parameter whose list is None is not swept.

    Raises:
        ContractViolation: If a given list is empty or no list is given.

    Example:
        >>> rows = run_grid(config, r_values=[1, 2, 4, 8, 16])
        >>> [row.value for row in rows]
        [1, 2, 4, 8, 16]
    """
    sweeps = {"r": r_values, "p": p_values, "u": u_values}
    if all(values is None for values in sweeps.values()):
        raise ContractViolation("run_grid needs at least one of r_values, p_values, u_values")
    points: List[Tuple[str, int]] = []
    for name, values in sweeps.items():
        if values is None:
            continue
        if len(values) == 0:
            raise ContractViolation(f"{name}_values must not be empty")
        points.extend((name, int(v)) for v in values)

    configs = []
    for name, value in points:
        section, field = GRID_KEYS[name]
        current = getattr(config, section)
        try:
            updated = type(current).model_validate({**current.model_dump(), field: value})
        except ValidationError as exc:
            raise ConfigurationError(f"invalid grid value {name}={value}: {exc.errors()[0]['msg']}") from exc
        configs.append(config.model_copy(update={section: updated}, deep=True))
    names = [f"{name}={value}" for name, value in points]
    reports = _run_all(configs, names, output_dir, cache_dir, config.workers)

    rows = []
    for (name, value), cfg, report in zip(points, configs, reports):
        s = summarize(report, config.ablation.prior, config.ablation.fusion)
        ranks = block_ranks(cfg)
        if name == "r" and any(r != value for r in ranks):
            logger.warning("grid r=%d: the %d px input caps the blocks at ranks %s", value, cfg.data.image_size, ranks)
        rows.append(
            GridRow(
                parameter=name, value=value, effective_r=ranks,
                acc=s.acc, macro_f1=s.macro_f1, macro_auc=s.macro_auc,
            )
        )
        logger.info("grid %s=%d: acc %.3f", name, value, s.acc)
    return rows


def ablation_csv(summaries: Sequence[CellSummary]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(ABLATION_COLUMNS)
    for s in summaries:
        writer.writerow([s.cell, s.prior, s.fusion, s.runs, f"{s.acc:.6f}", f"{s.macro_f1:.6f}", f"{s.macro_auc:.6f}"])
    return buffer.getvalue()


def grid_csv(rows: Sequence[GridRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(GRID_COLUMNS)
    for row in rows:
        writer.writerow(
            [
                row.parameter,
                row.value,
                "/".join(str(r) for r in row.effective_r),
                f"{row.acc:.6f}",
                f"{row.macro_f1:.6f}",
                f"{row.macro_auc:.6f}",
            ]
        )
    return buffer.getvalue()
