"""Tests for AdamW and the step schedule."""

import numpy as np
import pytest

from loasp.numerics.optim import AdamW, OptimizerState, adamw_step, step_lr
from loasp.numerics.tensor import Parameter
from loasp.types.errors import ContractViolation, NumericFailureError, ShapeError


class TestAdamWStep:
    """Single AdamW updates."""

    def test_first_step(self):
        """θ=1, g=1, lr=3e-3, wd=1e-4 moves to about 0.9969997."""
        theta = Parameter(np.array([1.0]))
        adamw_step([theta], [np.array([1.0])], OptimizerState(lr=3e-3, weight_decay=1e-4))
        assert theta.data[0] == pytest.approx(0.9969997, abs=1e-7)

    def test_zero_parameter_zero_gradient(self):
        """θ=0 with g=0 stays at 0."""
        theta = Parameter(np.zeros(3))
        adamw_step([theta], [np.zeros(3)], OptimizerState())
        np.testing.assert_array_equal(theta.data, np.zeros(3))

    def test_no_decay_no_gradient(self):
        """wd=0 and g=0 leave θ unchanged."""
        theta = Parameter(np.array([5.0]))
        adamw_step([theta], [np.array([0.0])], OptimizerState(weight_decay=0.0))
        assert theta.data[0] == 5.0

    def test_decay_is_decoupled(self):
        """With g=0 only the lr·wd·θ term acts."""
        theta = Parameter(np.array([2.0]))
        adamw_step([theta], [np.array([0.0])], OptimizerState(lr=0.1, weight_decay=0.5))
        assert theta.data[0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)

    def test_none_gradient_is_skipped(self):
        """A parameter without gradient keeps its value."""
        a, b = Parameter(np.array([1.0])), Parameter(np.array([1.0]))
        state = OptimizerState()
        adamw_step([a, b], [np.array([1.0]), None], state)
        assert b.data[0] == 1.0
        assert a.data[0] < 1.0
        assert state.step == 1

    def test_lr_override(self):
        """An explicit lr replaces the stored one for that step."""
        theta = Parameter(np.array([1.0]))
        adamw_step([theta], [np.array([1.0])], OptimizerState(lr=1.0, weight_decay=0.0), lr=0.01)
        assert theta.data[0] == pytest.approx(0.99, abs=1e-7)

    def test_shape_mismatch(self):
        """A gradient of another shape is rejected."""
        with pytest.raises(ShapeError):
            adamw_step([Parameter(np.ones(2))], [np.ones(3)], OptimizerState())

    def test_non_finite_gradient_names_parameter(self):
        """NaN gradients raise with the parameter name."""
        theta = Parameter(np.ones(2), name="head.weight")
        with pytest.raises(NumericFailureError) as exc_info:
            adamw_step([theta], [np.array([np.nan, 0.0])], OptimizerState())
        assert exc_info.value.node == "head.weight"

    def test_count_mismatch(self):
        """One gradient per parameter is required."""
        with pytest.raises(ContractViolation):
            adamw_step([Parameter(np.ones(1))], [], OptimizerState())


class TestAdamW:
    """The optimizer wrapper."""

    def test_frozen_parameters_are_excluded(self):
        """Parameters without requires_grad are never updated."""
        frozen = Parameter(np.ones(2), requires_grad=False)
        live = Parameter(np.ones(2))
        optimizer = AdamW([frozen, live])
        assert optimizer.params == [live]

    def test_minimizes_a_quadratic(self):
        """Repeated steps drive (θ − 3)² towards its minimum."""
        theta = Parameter(np.array([0.0]))
        optimizer = AdamW([theta], lr=0.1, weight_decay=0.0)
        for _ in range(300):
            optimizer.zero_grad()
            ((theta - 3.0) * (theta - 3.0)).sum().backward()
            optimizer.step()
        assert theta.data[0] == pytest.approx(3.0, abs=0.1)


class TestStepLR:
    """Halving schedule."""

    @pytest.mark.parametrize(
        "epoch,expected", [(0, 3e-3), (99, 3e-3), (100, 1.5e-3), (250, 7.5e-4)]
    )
    def test_schedule(self, epoch, expected):
        """The rate halves every 100 epochs."""
        assert step_lr(epoch, 3e-3) == pytest.approx(expected)

    def test_negative_epoch(self):
        """Negative epochs are rejected."""
        with pytest.raises(ContractViolation):
            step_lr(-1, 1e-3)
