"""Training loop for the toy backbone under a DG or SDG protocol."""

from __future__ import annotations

import contextlib
import csv
import io
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, TextIO, Tuple, Union

import numpy as np

from loasp._checkpoint import load_checkpoint, save_checkpoint
from loasp.backbone import ToyResNet
from loasp.harness import metrics
from loasp.harness._dataset_io import read_dataset, write_dataset
from loasp.harness.protocol import protocol_instances
from loasp.harness.synthetic import build_dataset, stack_samples
from loasp.numerics import functional as F
from loasp.numerics.optim import AdamW, step_lr
from loasp.numerics.tensor import Tensor, get_default_dtype, no_grad, set_default_dtype
from loasp.types.config import RunConfig
from loasp.types.data import Split
from loasp.types.errors import ConfigurationError, NumericFailureError
from loasp.types.metrics import DomainMetrics, MetricsReport, MetricsRow, RunReport

logger = logging.getLogger(__name__)

METRICS_COLUMNS = ("run_id", "seed", "protocol", "held_out", "epoch", "split", "acc", "macro_f1", "macro_auc", "loss")
CHECKPOINT_NAME = "model.ckpt"

Arrays = Tuple[np.ndarray, np.ndarray]
PathLike = Union[str, Path]


@contextlib.contextmanager
def use_precision(precision: str) -> Iterator[None]:
    """Switch the numerics default dtype inside the block."""
    previous = get_default_dtype()
    set_default_dtype(np.dtype(precision))
    try:
        yield
    finally:
        set_default_dtype(previous)


def cell_name(config: RunConfig) -> str:
    """``prior+fusion`` of the plug-in, or ``baseline`` for the plain backbone."""
    return f"{config.ablation.prior}+{config.ablation.fusion}" if config.plugged else "baseline"


def dataset_filename(domain: str, split: str, count: int, seed: int, size: int) -> str:
    return f"{domain}_{split}_n{count}_s{seed}_{size}px.lodg"


def load_domain(
    config: RunConfig,
    domain: str,
    split: str,
    cache_dir: Optional[PathLike] = None,
) -> Arrays:
    """Images and grades of one domain split, read from or written to ``cache_dir``."""
    data = config.data
    count = data.train_per_domain if split == "train" else data.test_per_domain
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / dataset_filename(domain, split, count, data.seed, data.image_size)
        if path.exists():
            logger.debug("reading cached split %s", path)
            return stack_samples(read_dataset(path))
    samples = build_dataset(domain, split, count, data.seed, data.image_size, config.workers)
    if path is not None:
        write_dataset(samples, path)
    return stack_samples(samples)


def load_split(
    config: RunConfig, split: Split, cache_dir: Optional[PathLike] = None
) -> Tuple[Arrays, Dict[str, Arrays]]:
    """Concatenated training arrays and one test array pair per test domain."""
    parts = [load_domain(config, d, "train", cache_dir) for d in split.train_domains]
    train_set = (np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))
    test_sets = {d: load_domain(config, d, "test", cache_dir) for d in split.test_domains}
    return train_set, test_sets


def lift_host_state(model: ToyResNet, state: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """Rename plain-backbone keys (``blocks.3.conv1.weight``) to the wrapped
    layout of ``model`` (``blocks.3.host.conv1.weight``) where that is the
    only match."""
    targets = set(model.state_dict())
    lifted: Dict[str, np.ndarray] = {}
    for key, value in state.items():
        parts = key.split(".")
        if key not in targets and len(parts) > 2 and parts[0] == "blocks":
            candidate = ".".join(parts[:2] + ["host"] + parts[2:])
            if candidate in targets:
                key = candidate
        lifted[key] = value
    return lifted


def build_model(config: RunConfig, seed: int) -> ToyResNet:
    """Backbone for one run; applies the low-rank tuning mode when configured."""
    model = ToyResNet(config, seed=seed)
    if config.train.tuning == "low_rank":
        if not config.plugged:
            raise ConfigurationError("low-rank tuning needs plug-in blocks; the plain backbone has none to train")
        if config.train.init_checkpoint:
            state = lift_host_state(model, load_checkpoint(config.train.init_checkpoint))
            missing = model.load_state_dict(state, strict=False)
            logger.info(
                "initialized host from %s (%d keys left at init)", config.train.init_checkpoint, len(missing)
            )
        frozen, trainable = model.freeze_host()
        logger.info("low-rank tuning: %d frozen, %d trainable parameters", frozen, trainable)
    return model


def predict(model: ToyResNet, images: np.ndarray, batch_size: int) -> np.ndarray:
    """Class probabilities (N, classes) in inference mode."""
    was_training = model.training
    model.eval()
    chunks = []
    try:
        with no_grad():
            for start in range(0, len(images), batch_size):
                logits = model(Tensor(images[start : start + batch_size]))
                chunks.append(F.softmax(logits.data.astype(np.float64)))
    finally:
        model.train(was_training)
    return np.concatenate(chunks)


def score_domain(domain: str, probs: np.ndarray, labels: np.ndarray) -> DomainMetrics:
    preds = probs.argmax(axis=1)
    return DomainMetrics(
        domain=domain,
        acc=metrics.accuracy(preds, labels),
        macro_f1=metrics.macro_f1(preds, labels),
        macro_auc=metrics.macro_auc(probs, labels),
    )


def mean_metrics(scores: Iterable[DomainMetrics]) -> DomainMetrics:
    rows = list(scores)
    return DomainMetrics(
        domain="mean",
        acc=float(np.mean([m.acc for m in rows])),
        macro_f1=float(np.mean([m.macro_f1 for m in rows])),
        macro_auc=float(np.mean([m.macro_auc for m in rows])),
    )


def evaluate_model(
    model: ToyResNet,
    test_sets: Dict[str, Arrays],
    batch_size: int,
) -> Tuple[List[DomainMetrics], DomainMetrics]:
    """Per-domain scores and their mean across test domains."""
    per_domain = [score_domain(d, predict(model, x, batch_size), y) for d, (x, y) in test_sets.items()]
    return per_domain, mean_metrics(per_domain)


def run_id_for(config: RunConfig, split: Split, seed: int) -> str:
    return f"{cell_name(config)}_{split.mode}_{split.held_out}_s{seed}"


def row_base(run_id: str, seed: int, split: Split) -> Dict[str, Any]:
    return dict(run_id=run_id, seed=seed, protocol=split.mode, held_out=split.held_out or "")


def held_out_rows(base: Dict[str, Any], epoch: int, scores: Iterable[DomainMetrics]) -> List[MetricsRow]:
    """One ``test:<domain>`` row per score, the mean row included."""
    return [
        MetricsRow(**base, epoch=epoch, split=f"test:{m.domain}", acc=m.acc, macro_f1=m.macro_f1, macro_auc=m.macro_auc)
        for m in scores
    ]


def _train_epoch(
    model: ToyResNet,
    optimizer: AdamW,
    train_set: Arrays,
    order: np.ndarray,
    batch_size: int,
    lr: float,
    epoch: int,
) -> Tuple[float, float]:
    images, labels = train_set
    total_loss = 0.0
    correct = 0
    seen = 0
    for batch, start in enumerate(range(0, len(order), batch_size)):
        index = order[start : start + batch_size]
        if len(index) < 2:
            logger.debug("epoch %d: dropped a trailing batch of %d sample", epoch, len(index))
            continue
        try:
            optimizer.zero_grad()
            logits = model(Tensor(images[index]))
            loss = F.cross_entropy(logits, labels[index])
            loss.backward()
            optimizer.step(lr=lr)
        except NumericFailureError as exc:
            exc.epoch, exc.batch = epoch, batch
            raise
        total_loss += loss.item() * len(index)
        correct += int(np.sum(logits.data.argmax(axis=1) == labels[index]))
        seen += len(index)
    if seen == 0:
        return 0.0, 0.0
    return total_loss / seen, correct / seen


def train_run(
    config: RunConfig,
    split: Split,
    seed: int,
    datasets: Optional[Tuple[Arrays, Dict[str, Arrays]]] = None,
    output_dir: Optional[PathLike] = None,
    cache_dir: Optional[PathLike] = None,
) -> Tuple[RunReport, List[MetricsRow], ToyResNet]:
    """Train one model for one seed and protocol instance, then score it.

    Args:
        config: Run configuration.
        split: Training and test domains.
        seed: Model-initialization and shuffling seed.
        datasets: Preloaded ``load_split`` output, reused across seeds.
        output_dir: Where ``<run_id>/model.ckpt`` is written; nothing is saved when None.
        cache_dir: Dataset cache used when ``datasets`` is not given.

    Returns:
        The run report, its CSV rows and the trained model.

    Raises:
        NumericFailureError: With ``epoch`` and ``batch`` set when training diverges.
    """
    train_set, test_sets = datasets if datasets is not None else load_split(config, split, cache_dir)
    dtype = get_default_dtype()
    train_set = (train_set[0].astype(dtype), train_set[1])
    test_sets = {d: (x.astype(dtype), y) for d, (x, y) in test_sets.items()}

    run_id = run_id_for(config, split, seed)
    tc = config.train
    base_lr = tc.low_rank_lr if tc.tuning == "low_rank" else tc.lr
    model = build_model(config, seed)
    optimizer = AdamW(
        model.parameters(), lr=base_lr, betas=(tc.beta1, tc.beta2), eps=tc.eps, weight_decay=tc.weight_decay
    )
    shuffler = np.random.default_rng([seed, config.data.seed])
    logger.info("run %s: %d training images, %d epochs", run_id, len(train_set[1]), tc.epochs)

    base = row_base(run_id, seed, split)
    rows: List[MetricsRow] = []
    losses: List[float] = []
    model.train()
    for epoch in range(tc.epochs):
        lr = step_lr(epoch, base_lr, tc.lr_period)
        order = shuffler.permutation(len(train_set[1]))
        loss, acc = _train_epoch(model, optimizer, train_set, order, tc.batch_size, lr, epoch)
        losses.append(loss)
        rows.append(MetricsRow(**base, epoch=epoch + 1, split="train", acc=acc, loss=loss))
        logger.info("run %s epoch %d/%d: loss %.4f, acc %.3f, lr %.2e", run_id, epoch + 1, tc.epochs, loss, acc, lr)

    per_domain, mean = evaluate_model(model, test_sets, tc.batch_size)
    rows.extend(held_out_rows(base, tc.epochs, per_domain + [mean]))
    checkpoint = None
    if output_dir is not None:
        checkpoint = str(save_checkpoint(model.state_dict(), Path(output_dir) / run_id / CHECKPOINT_NAME))
    logger.info("run %s: mean held-out acc %.3f, f1 %.3f, auc %.3f", run_id, mean.acc, mean.macro_f1, mean.macro_auc)
    report = RunReport(
        run_id=run_id,
        seed=seed,
        cell=model.cell,
        split=split,
        losses=losses,
        test=per_domain,
        mean=mean,
        checkpoint=checkpoint,
    )
    return report, rows, model


def train(
    config: RunConfig,
    output_dir: Optional[PathLike] = None,
    cache_dir: Optional[PathLike] = None,
) -> MetricsReport:
    """Train every (protocol instance, seed) pair of ``config``.

    With ``output_dir`` set, checkpoints go to ``<output_dir>/<run_id>/`` and
    the rows to ``<output_dir>/metrics.csv``. The numerics precision is
    switched to ``config.precision`` for the duration of the call.

    Example:
        >>> report = train(RunConfig(seeds=[0], train=TrainConfig(epochs=2)))
        >>> report.runs[0].mean.acc
    """
    with use_precision(config.precision):
        splits = protocol_instances(config.data.domains, config.protocol.mode, config.protocol.held_out)
        report = MetricsReport(cell=cell_name(config))
        for split in splits:
            datasets = load_split(config, split, cache_dir)
            for seed in config.seeds:
                run, rows, _ = train_run(config, split, seed, datasets=datasets, output_dir=output_dir)
                report.runs.append(run)
                report.rows.extend(rows)
    if output_dir is not None:
        path = Path(output_dir) / "metrics.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(metrics_csv(report.rows), encoding="utf-8")
        logger.info("wrote %s", path)
    return report


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.6f}"


def write_metrics_csv(rows: Iterable[MetricsRow], stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(METRICS_COLUMNS)
    for row in rows:
        writer.writerow(
            [
                row.run_id,
                row.seed,
                row.protocol,
                row.held_out,
                row.epoch,
                row.split,
                _fmt(row.acc),
                _fmt(row.macro_f1),
                _fmt(row.macro_auc),
                _fmt(row.loss),
            ]
        )


def metrics_csv(rows: Iterable[MetricsRow]) -> str:
    buffer = io.StringIO()
    write_metrics_csv(rows, buffer)
    return buffer.getvalue()
