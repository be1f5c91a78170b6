"""Tests for the training loop on a tiny three-domain run."""

import csv
import io

import numpy as np
import pytest

from loasp._checkpoint import load_checkpoint, save_checkpoint
from loasp.backbone import ToyResNet
from loasp.harness.protocol import build_protocol
from loasp.harness.trainer import (
    METRICS_COLUMNS,
    build_model,
    dataset_filename,
    lift_host_state,
    load_split,
    train,
    train_run,
    use_precision,
)
from loasp.numerics.tensor import get_default_dtype
from loasp.types.config import AblationConfig, TrainConfig
from loasp.types.errors import ConfigurationError


def read_rows(path):
    return list(csv.DictReader(io.StringIO(path.read_text(encoding="utf-8"))))


def test_train_writes_metrics_and_checkpoint(tiny_config, out_dir):
    """One epoch writes a train row, per-domain and mean test rows and a checkpoint."""
    report = train(tiny_config, output_dir=out_dir)
    assert len(report.runs) == 1
    run = report.runs[0]
    assert run.run_id == "loasp+loap_DG_C_s0"
    assert run.cell == "loasp+loap"
    assert run.split.train_domains == ["A", "B"]
    assert len(run.losses) == 1 and np.isfinite(run.losses[0])

    rows = read_rows(out_dir / "metrics.csv")
    assert list(rows[0]) == list(METRICS_COLUMNS)
    assert [row["split"] for row in rows] == ["train", "test:C", "test:mean"]
    assert rows[0]["macro_auc"] == ""
    assert rows[1]["acc"] == rows[2]["acc"]
    for row in rows[1:]:
        assert 0.0 <= float(row["acc"]) <= 1.0
        assert 0.0 <= float(row["macro_auc"]) <= 1.0

    state = load_checkpoint(out_dir / run.run_id / "model.ckpt")
    assert state.keys() == ToyResNet(tiny_config).state_dict().keys()


def test_runs_are_reproducible(tiny_config, tmp_path):
    """Two runs with the same configuration write identical metrics files."""
    train(tiny_config, output_dir=tmp_path / "first")
    train(tiny_config, output_dir=tmp_path / "second")
    first = (tmp_path / "first" / "metrics.csv").read_bytes()
    assert first == (tmp_path / "second" / "metrics.csv").read_bytes()


def test_zero_epochs_only_evaluates(tiny_config):
    """With no epochs the report holds the untrained model's test scores."""
    cfg = tiny_config.model_copy(update={"train": TrainConfig(epochs=0, batch_size=4)})
    report = train(cfg)
    assert report.runs[0].losses == []
    assert [row.split for row in report.rows] == ["test:C", "test:mean"]
    assert report.mean_acc("C") == report.runs[0].mean.acc


def test_sdg_tests_every_other_domain(tiny_config):
    """SDG on A scores B and C."""
    cfg = tiny_config.model_copy(
        update={"protocol": tiny_config.protocol.model_copy(update={"mode": "SDG", "held_out": "A"})}
    )
    report = train(cfg.model_copy(update={"train": TrainConfig(epochs=0, batch_size=4)}))
    assert [m.domain for m in report.runs[0].test] == ["B", "C"]


def test_precision_is_restored(tiny_config):
    """float32 runs leave the default dtype as they found it."""
    cfg = tiny_config.model_copy(update={"precision": "float32", "train": TrainConfig(epochs=0, batch_size=4)})
    train(cfg)
    assert get_default_dtype() == np.float64
    with use_precision("float32"):
        assert get_default_dtype() == np.float32


def test_dataset_cache(tiny_config, tmp_path):
    """Splits are written to the cache once and read back unchanged."""
    split = build_protocol(["A", "B", "C"], "DG", "C")
    (train_x, train_y), tests = load_split(tiny_config, split, tmp_path)
    assert train_x.shape == (8, 3, 16, 16)
    assert (tmp_path / dataset_filename("A", "train", 4, 2024, 16)).is_file()
    (again_x, again_y), _ = load_split(tiny_config, split, tmp_path)
    assert again_x.tobytes() == train_x.tobytes()
    np.testing.assert_array_equal(again_y, train_y)
    assert tests["C"][0].shape == (5, 3, 16, 16)


class TestLowRankTuning:
    """Host frozen, plug-ins trained."""

    def test_needs_plug_ins(self, tiny_config):
        """The plain backbone has nothing to tune."""
        cfg = tiny_config.model_copy(
            update={"ablation": AblationConfig(prior="none"), "train": TrainConfig(tuning="low_rank")}
        )
        with pytest.raises(ConfigurationError):
            build_model(cfg, 0)

    def test_host_weights_do_not_move(self, tiny_config):
        """After an epoch of low-rank tuning every host parameter is unchanged."""
        cfg = tiny_config.model_copy(update={"train": TrainConfig(epochs=1, batch_size=4, tuning="low_rank")})
        before = {id(p): p.data.copy() for p in ToyResNet(cfg, seed=0).host_parameters()}
        split = build_protocol(["A", "B", "C"], "DG", "C")
        _, _, model = train_run(cfg, split, seed=0)
        after = model.host_parameters()
        assert len(after) == len(before)
        fresh = ToyResNet(cfg, seed=0).host_parameters()
        for original, trained in zip(fresh, after):
            np.testing.assert_array_equal(original.data, trained.data)
        assert any(np.any(p.grad != 0) for p in model.plugin_parameters() if p.grad is not None)

    def test_initializes_host_from_plain_checkpoint(self, tiny_config, tmp_path):
        """Plain-backbone weights land in the wrapped hosts; plug-ins keep their init."""
        plain_cfg = tiny_config.model_copy(update={"ablation": AblationConfig(prior="none")})
        plain = ToyResNet(plain_cfg, seed=9)
        path = save_checkpoint(plain.state_dict(), tmp_path / "plain.ckpt")
        cfg = tiny_config.model_copy(
            update={"train": TrainConfig(tuning="low_rank", init_checkpoint=str(path))}
        )
        model = build_model(cfg, 0)
        np.testing.assert_array_equal(model.blocks[3].host.conv1.weight.data, plain.blocks[3].conv1.weight.data)
        np.testing.assert_array_equal(model.stem.weight.data, plain.stem.weight.data)
        np.testing.assert_array_equal(model.head.weight.data, plain.head.weight.data)
        np.testing.assert_array_equal(model.blocks[0].a_c.weight.data, 0.0)

    def test_lift_keeps_matching_keys(self, tiny_config):
        """Keys that already match the model are left alone."""
        model = ToyResNet(tiny_config)
        state = model.state_dict()
        assert lift_host_state(model, state).keys() == state.keys()
