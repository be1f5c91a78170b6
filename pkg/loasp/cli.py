"""Command-line entry point: ``loasp <verb> [options] [key=value ...]``."""

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from loasp import _config
from loasp._checkpoint import load_checkpoint
from loasp.accounting import count_added_params, cost_csv, resnet50_catalog
from loasp.harness import experiments
from loasp.harness._dataset_io import write_dataset
from loasp.harness.synthetic import build_dataset
from loasp.harness.trainer import dataset_filename, metrics_csv, train
from loasp.types.config import RunConfig
from loasp.types.errors import LoASPError, exit_code_for
from loasp.version import __version__
from loasp.viz import visualize

logger = logging.getLogger("loasp")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="config file of 'key = value' lines")
    parser.add_argument("--out", metavar="DIR", help="output root (default: $LOASP_OUT or ./runs)")
    parser.add_argument("overrides", nargs="*", metavar="key=value", help="config overrides, e.g. train.epochs=3")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="loasp",
        description="LoASP plug-in blocks: training, ablation, accounting and visualization.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    verbs = parser.add_subparsers(dest="verb", required=True, metavar="VERB")

    p = verbs.add_parser("gen-data", help="generate the synthetic domain splits")
    _common(p)

    p = verbs.add_parser("train", help="train under the configured DG/SDG protocol")
    _common(p)

    p = verbs.add_parser("eval", help="re-score saved checkpoints without training")
    _common(p)
    p.add_argument("--run-dir", metavar="DIR", help="directory of <run_id>/model.ckpt (default: <out>/train)")

    p = verbs.add_parser("ablate", help="train the priors x fusion grid and the plain backbone")
    _common(p)
    p.add_argument("--no-baseline", action="store_true", help="skip the plain-backbone row")

    p = verbs.add_parser("grid", help="one-at-a-time r/p/u sweep")
    _common(p)
    p.add_argument("--r", type=_int_list, metavar="LIST", help="rank values, e.g. 1,2,4,8,16")
    p.add_argument("--p", type=_int_list, metavar="LIST", help="spline degrees, e.g. 0,1,2,3,4")
    p.add_argument("--u", type=_int_list, metavar="LIST", help="grid intervals, e.g. 3,4,5,6,7")

    p = verbs.add_parser("count", help="parameter and FLOP accounting on the ResNet-50 catalog")
    _common(p)
    p.add_argument(
        "--r-values", type=_int_list, default=[3, 4, 8], metavar="LIST", help="ranks for the efficiency check"
    )
    p.add_argument("--csv", metavar="FILE", help="also write the table to FILE")

    p = verbs.add_parser("viz", help="render the prior map of one block as PPM")
    _common(p)
    p.add_argument("--checkpoint", metavar="FILE", help="weights to load (default: fresh initialization)")
    p.add_argument("--output", metavar="FILE", help="PPM path (default: <out>/viz/prior_block<N>.ppm)")
    return parser


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)
    logging.captureWarnings(True)


def _load_config(args: argparse.Namespace) -> RunConfig:
    file_values = _config.load_config_file(args.config) if args.config else {}
    return _config.build_run_config(file_values, _config.parse_overrides(args.overrides))


def _emit(text: str, path: Optional[Path] = None) -> None:
    sys.stdout.write(text)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        logger.info("wrote %s", path)


def cmd_gen_data(args: argparse.Namespace, config: RunConfig, root: Path) -> None:
    data = config.data
    for domain in data.domains:
        for split, count in (("train", data.train_per_domain), ("test", data.test_per_domain)):
            samples = build_dataset(domain, split, count, data.seed, data.image_size, config.workers)
            name = dataset_filename(domain, split, count, data.seed, data.image_size)
            path = write_dataset(samples, root / "data" / name)
            logger.info("wrote %s (%d samples)", path, len(samples))


def cmd_train(args: argparse.Namespace, config: RunConfig, root: Path) -> None:
    report = train(config, output_dir=root / "train", cache_dir=root / "data")
    sys.stdout.write(metrics_csv(report.rows))


def cmd_eval(args: argparse.Namespace, config: RunConfig, root: Path) -> None:
    run_dir = Path(args.run_dir) if args.run_dir else root / "train"
    report = experiments.evaluate(config, run_dir, cache_dir=root / "data")
    _emit(metrics_csv(report.rows), root / "eval" / "metrics.csv")


def cmd_ablate(args: argparse.Namespace, config: RunConfig, root: Path) -> None:
    summaries, _ = experiments.ablate(
        config, output_dir=root / "ablate", cache_dir=root / "data", include_baseline=not args.no_baseline
    )
    _emit(experiments.ablation_csv(summaries), root / "ablate" / "ablation.csv")


def cmd_grid(args: argparse.Namespace, config: RunConfig, root: Path) -> None:
    rows = experiments.run_grid(config, args.r, args.p, args.u, output_dir=root / "grid", cache_dir=root / "data")
    _emit(experiments.grid_csv(rows), root / "grid" / "grid.csv")


def cmd_count(args: argparse.Namespace, config: RunConfig, root: Path) -> None:
    report = count_added_params(resnet50_catalog(), config, r_values=args.r_values)
    _emit(cost_csv(report), Path(args.csv) if args.csv else None)
    failed = [check for check in report.efficiency if not check.holds]
    if failed:
        logger.warning("efficiency bound fails for %d (block, r) pairs", len(failed))


def cmd_viz(args: argparse.Namespace, config: RunConfig, root: Path) -> None:
    state = load_checkpoint(args.checkpoint) if args.checkpoint else None
    output = Path(args.output) if args.output else root / "viz" / f"prior_block{config.viz.block_index}.ppm"
    visualize(config, output, state=state)


COMMANDS: Dict[str, Callable[[argparse.Namespace, RunConfig, Path], None]] = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "grid": cmd_grid,
    "count": cmd_count,
    "viz": cmd_viz,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command and return its exit code.

    Exit codes: 0 on success, 2 on configuration errors, 3 on numeric
    failures, 1 on any other library error. Usage errors exit through
    argparse.
    """
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        config = _load_config(args)
        root = _config.get_output_root(args.out)
        COMMANDS[args.verb](args, config, root)
    except LoASPError as exc:
        logger.error("%s failed: %s", args.verb, exc)
        return exit_code_for(exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
