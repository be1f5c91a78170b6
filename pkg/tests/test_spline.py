"""Tests for B-spline bases and the spline activation."""

import numpy as np
import pytest
from pydantic import ValidationError

from loasp.numerics.tensor import Parameter, Tensor
from loasp.spline import (
    SplineActivation,
    basis_all,
    bspline_basis,
    greville_identity_init,
    make_clamped_uniform_knots,
    spline_eval,
)
from loasp.types.errors import ContractViolation, ShapeError, UnsupportedInitError
from loasp.types.spline import KnotVector


class TestKnots:
    """Clamped uniform knot construction and validation."""

    def test_quadratic_two_intervals(self):
        """p=2, G=2 on [-1, 1]."""
        knots = make_clamped_uniform_knots(2, 2)
        assert knots.knots == [-1.0, -1.0, -1.0, 0.0, 1.0, 1.0, 1.0]
        assert knots.num_basis == 4
        assert knots.domain == (-1.0, 1.0)

    def test_piecewise_constant(self):
        """p=0, G=3 on [0, 3] has no repeated knots."""
        knots = make_clamped_uniform_knots(0, 3, 0.0, 3.0)
        assert knots.knots == [0.0, 1.0, 2.0, 3.0]
        assert knots.num_basis == 3

    def test_smallest_linear(self):
        """p=1, G=1 gives [lo, lo, hi, hi]."""
        knots = make_clamped_uniform_knots(1, 1, 0.5, 2.0)
        assert knots.knots == [0.5, 0.5, 2.0, 2.0]
        assert knots.num_basis == 2

    @pytest.mark.parametrize("args", [(1, 0), (1, 2, 1.0, 1.0), (-1, 2)])
    def test_invalid_arguments(self, args):
        """G < 1, lo >= hi and negative degrees are rejected."""
        with pytest.raises(ContractViolation):
            make_clamped_uniform_knots(*args)

    def test_decreasing_knots_rejected(self):
        """A KnotVector must be non-decreasing."""
        with pytest.raises(ValidationError):
            KnotVector(degree=1, knots=[0.0, 1.0, 0.5, 2.0])

    def test_degenerate_domain_rejected(self):
        """u_p < u_{m-p} is required."""
        with pytest.raises(ValidationError):
            KnotVector(degree=1, knots=[0.0, 1.0, 1.0, 2.0])


class TestBasis:
    """Cox–de Boor evaluation."""

    def test_degree_zero_indicator(self):
        """N_{0,0}(0.5) on [0, 1, 2] is 1."""
        assert bspline_basis(0, 0, 0.5, [0.0, 1.0, 2.0]) == 1.0

    @pytest.mark.parametrize("x", [0.5, 1.5])
    def test_linear_hat(self, x):
        """The linear hat on [0, 1, 2] is 0.5 at 0.5 and 1.5."""
        assert bspline_basis(0, 1, x, [0.0, 1.0, 2.0]) == pytest.approx(0.5)

    def test_index_out_of_range(self):
        """i must be below m - p."""
        with pytest.raises(ContractViolation):
            bspline_basis(1, 1, 0.5, [0.0, 1.0, 2.0])

    def test_partition_at_interior_point(self):
        """p=2, G=2, x=0.3 sums to one."""
        values = basis_all(2, 0.3, make_clamped_uniform_knots(2, 2))
        assert values.shape == (4,)
        assert values.sum() == pytest.approx(1.0, abs=1e-12)

    def test_lower_end(self):
        """At x = lo only the first function is active."""
        values = basis_all(3, -1.0, make_clamped_uniform_knots(3, 4))
        np.testing.assert_array_equal(values, np.eye(7)[0])

    def test_upper_end_is_closed(self):
        """At x = hi the last function is 1."""
        values = basis_all(2, 1.0, make_clamped_uniform_knots(2, 3))
        np.testing.assert_array_equal(values, np.eye(5)[-1])

    def test_out_of_domain_is_clamped(self):
        """Inputs beyond the domain evaluate like the nearest end."""
        knots = make_clamped_uniform_knots(2, 3)
        np.testing.assert_array_equal(basis_all(2, 5.0, knots), basis_all(2, 1.0, knots))
        np.testing.assert_array_equal(basis_all(2, -9.0, knots), basis_all(2, -1.0, knots))

    @pytest.mark.parametrize("p", [0, 1, 2, 3, 4])
    def test_properties_against_recursion(self, p):
        """Partition of unity, non-negativity, local support and agreement with the recursion."""
        rng = np.random.default_rng(p)
        for G in range(1, 9):
            knots = make_clamped_uniform_knots(p, G)
            u = knots.array
            xs = rng.uniform(-1.0, 1.0, size=100)
            values = basis_all(p, xs, knots)
            assert values.shape == (100, G + p)
            np.testing.assert_allclose(values.sum(axis=1), 1.0, rtol=0, atol=1e-12)
            assert np.all(values >= 0.0)
            for row, x in zip(values, xs):
                for i in range(G + p):
                    if x < u[i] or x > u[i + p + 1]:
                        assert row[i] == 0.0
                expected = [bspline_basis(i, p, x, knots) for i in range(G + p)]
                np.testing.assert_allclose(row, expected, rtol=0, atol=1e-14)


class TestGreville:
    """Identity initialization."""

    def test_quadratic_coefficients(self):
        """p=2 on [-1,-1,-1,0,1,1,1] gives [-1, -0.5, 0.5, 1]."""
        coef = greville_identity_init(make_clamped_uniform_knots(2, 2), 3)
        assert coef.shape == (3, 4)
        np.testing.assert_allclose(coef[1], [-1.0, -0.5, 0.5, 1.0])

    def test_linear_coefficients(self):
        """p=1 on [0,0,1,1] gives [0, 1]."""
        coef = greville_identity_init(KnotVector(degree=1, knots=[0.0, 0.0, 1.0, 1.0]), 1)
        np.testing.assert_allclose(coef[0], [0.0, 1.0])

    def test_degree_zero_unsupported(self):
        """Degree 0 cannot reproduce a line."""
        with pytest.raises(UnsupportedInitError):
            greville_identity_init(make_clamped_uniform_knots(0, 3), 1)

    @pytest.mark.parametrize("p,u", [(1, 3), (2, 2), (3, 6), (4, 5)])
    def test_activation_starts_as_identity(self, p, u):
        """A fresh activation maps interior points to themselves."""
        act = SplineActivation(1, p=p, u=u)
        x = np.random.default_rng(7).uniform(-1.0, 1.0, size=1000).reshape(1, 1, 10, 100)
        out = act(Tensor(x))
        np.testing.assert_allclose(out.data, x, rtol=0, atol=1e-9)


class TestSplineEval:
    """Per-channel evaluation on NCHW tensors."""

    def test_identity_at_zero(self):
        """Greville coefficients with p=2, G=2 map 0 to 0 and 0.37 to 0.37."""
        act = SplineActivation(1, p=2, u=2)
        out = spline_eval(act, Tensor(np.array([0.0, 0.37]).reshape(1, 1, 1, 2)))
        np.testing.assert_allclose(out.data.ravel(), [0.0, 0.37], atol=1e-12)

    def test_zero_coefficients(self):
        """All-zero coefficients give an all-zero output."""
        act = SplineActivation(2, p=3, u=4)
        act.coefficients.data[...] = 0.0
        out = act(Tensor(np.random.default_rng(0).normal(size=(2, 2, 3, 3))))
        np.testing.assert_array_equal(out.data, np.zeros((2, 2, 3, 3)))

    def test_channels_use_their_own_row(self):
        """Scaling one channel's coefficients scales only that channel."""
        act = SplineActivation(2, p=2, u=3)
        act.coefficients.data[1] *= 2.0
        x = np.full((1, 2, 1, 1), 0.25)
        out = act(Tensor(x)).data.ravel()
        np.testing.assert_allclose(out, [0.25, 0.5], atol=1e-12)

    def test_coefficient_gradient_is_basis(self):
        """d sum(y) / d c equals the summed basis values."""
        act = SplineActivation(1, p=3, u=4)
        x = np.random.default_rng(3).uniform(-1.0, 1.0, size=(1, 1, 2, 3))
        act(Tensor(x)).sum().backward()
        expected = basis_all(3, x, act.knots).reshape(-1, 7).sum(axis=0)
        np.testing.assert_allclose(act.coefficients.grad[0], expected, atol=1e-12)

    def test_degree_zero_activation(self):
        """Degree 0 falls back to interval midpoints and is piecewise constant."""
        act = SplineActivation(1, p=0, u=4)
        np.testing.assert_allclose(act.coefficients.data[0], [-0.75, -0.25, 0.25, 0.75])
        x = Parameter(np.array([-0.9, 0.1]).reshape(1, 1, 1, 2))
        out = act(x)
        np.testing.assert_allclose(out.data.ravel(), [-0.75, 0.25])
        out.sum().backward()
        np.testing.assert_array_equal(x.grad, np.zeros_like(x.data))

    def test_channel_mismatch(self):
        """Input channels must match the coefficient rows."""
        with pytest.raises(ShapeError):
            SplineActivation(3)(Tensor(np.zeros((1, 2, 2, 2))))
