"""Backward passes checked against central finite differences."""

import numpy as np
import pytest

from loasp.blocks import LoASPBlock, wrap_block
from loasp.numerics import functional as F
from loasp.numerics.gradcheck import check_gradient
from loasp.numerics.layers import BatchNorm2d, Identity
from loasp.numerics.tensor import Parameter, Tensor
from loasp.snake_conv import DSConvModule, SnakeKernel, accumulate_offsets, snake_conv_axis
from loasp.spline import SplineActivation
from loasp.types.config import DSConvConfig, LoASPConfig, RunConfig

TOLERANCE = 1e-5


def weighted(out: Tensor, weights: np.ndarray) -> Tensor:
    return (out * Tensor(weights)).sum()


def test_conv2d_strided_padded(rng):
    """Input and kernel gradients of a stride-2, pad-1 convolution."""
    x = Parameter(rng.normal(size=(2, 3, 5, 5)))
    k = Parameter(rng.normal(size=(4, 3, 3, 3)))
    w = rng.normal(size=(2, 4, 3, 3))

    def loss():
        return weighted(F.conv2d(x, k, stride=2, padding=1), w)

    assert check_gradient(loss, x) < TOLERANCE
    assert check_gradient(loss, k) < TOLERANCE


def test_conv2d_grouped_with_bias(rng):
    """Grouped convolution with a bias differentiates all three inputs."""
    x = Parameter(rng.normal(size=(1, 4, 4, 4)))
    k = Parameter(rng.normal(size=(6, 2, 3, 3)))
    b = Parameter(rng.normal(size=6))
    w = rng.normal(size=(1, 6, 2, 2))

    def loss():
        return weighted(F.conv2d(x, k, groups=2, bias=b), w)

    for tensor in (x, k, b):
        assert check_gradient(loss, tensor) < TOLERANCE


def test_conv2d_depthwise_strided(rng):
    """Depthwise convolution with stride, padding and bias."""
    x = Parameter(rng.normal(size=(2, 3, 5, 5)))
    k = Parameter(rng.normal(size=(3, 1, 3, 3)))
    b = Parameter(rng.normal(size=3))
    w = rng.normal(size=(2, 3, 3, 3))

    def loss():
        return weighted(F.conv2d(x, k, stride=2, padding=1, groups=3, bias=b), w)

    for tensor in (x, k, b):
        assert check_gradient(loss, tensor) < TOLERANCE


def test_conv2d_pointwise_strided(rng):
    """A stride-2 1×1 convolution sends no gradient to skipped pixels."""
    x = Parameter(rng.normal(size=(2, 4, 5, 5)))
    k = Parameter(rng.normal(size=(3, 4, 1, 1)))
    w = rng.normal(size=(2, 3, 3, 3))

    def loss():
        return weighted(F.conv2d(x, k, stride=2), w)

    assert check_gradient(loss, x) < TOLERANCE
    assert check_gradient(loss, k) < TOLERANCE
    loss().backward()
    np.testing.assert_array_equal(x.grad[:, :, 1::2, :], 0.0)


def test_batch_norm_training(rng):
    """Training-mode batch norm, including the batch-statistics path."""
    bn = BatchNorm2d(3)
    bn.weight.data[:] = rng.normal(size=3)
    bn.bias.data[:] = rng.normal(size=3)
    x = Parameter(rng.normal(size=(4, 3, 2, 2)))
    w = rng.normal(size=(4, 3, 2, 2))

    def loss():
        return weighted(bn(x), w)

    for tensor in (x, bn.weight, bn.bias):
        assert check_gradient(loss, tensor) < TOLERANCE


def test_bilinear_gather(rng):
    """Gradients flow into the feature map and both coordinate arrays."""
    feature = Parameter(rng.normal(size=(2, 3, 4, 5)))
    rows = Parameter(rng.uniform(0.1, 2.9, size=(2, 6)))
    cols = Parameter(rng.uniform(0.1, 3.9, size=(2, 6)))
    w = rng.normal(size=(2, 3, 6))

    def loss():
        return weighted(F.bilinear_gather(feature, rows, cols), w)

    for tensor in (feature, rows, cols):
        assert check_gradient(loss, tensor) < TOLERANCE


def test_cross_entropy(rng):
    """Softmax cross-entropy gradient with respect to the logits."""
    logits = Parameter(rng.normal(size=(4, 5)))
    labels = [0, 3, 1, 4]
    assert check_gradient(lambda: F.cross_entropy(logits, labels), logits) < TOLERANCE


def test_einsum(rng):
    """Two-operand einsum differentiates both operands."""
    a = Parameter(rng.normal(size=(2, 3, 4)))
    b = Parameter(rng.normal(size=(5, 3)))
    w = rng.normal(size=(2, 5, 4))

    def loss():
        return weighted(F.einsum("nck,oc->nok", a, b), w)

    assert check_gradient(loss, a) < TOLERANCE
    assert check_gradient(loss, b) < TOLERANCE


@pytest.mark.parametrize("degree", [2, 3])
def test_spline_activation(rng, degree):
    """Spline gradients with respect to inputs and coefficients."""
    act = SplineActivation(2, p=degree, u=5)
    act.coefficients.data += rng.normal(scale=0.2, size=act.coefficients.shape)
    x = Parameter(rng.uniform(-0.95, 0.95, size=(2, 2, 3, 3)))
    w = rng.normal(size=x.shape)

    def loss():
        return weighted(act(x), w)

    assert check_gradient(loss, x) < TOLERANCE
    assert check_gradient(loss, act.coefficients) < TOLERANCE


def test_spline_clamped_inputs_have_zero_gradient():
    """Inputs outside the domain receive no gradient."""
    act = SplineActivation(1, p=3, u=4)
    x = Parameter(np.array([-3.0, 0.2, 4.0]).reshape(1, 1, 1, 3))
    act(x).sum().backward()
    assert x.grad[0, 0, 0, 0] == 0.0
    assert x.grad[0, 0, 0, 2] == 0.0
    assert x.grad[0, 0, 0, 1] == pytest.approx(1.0)


@pytest.mark.parametrize("axis", ["x", "y"])
def test_snake_axis_with_fractional_offsets(rng, axis):
    """Snake convolution differentiates input, weights and offsets."""
    kernel = SnakeKernel(axis, 2, 3, k=5, rng=rng)
    x = Parameter(rng.normal(size=(1, 2, 5, 6)))
    steps = rng.uniform(-0.45, 0.45, size=(1, 5, 5, 6))
    offsets = Parameter(accumulate_offsets(steps).data + 0.013)
    w = rng.normal(size=(1, 3, 5, 6))

    def loss():
        return weighted(snake_conv_axis(x, kernel, offsets), w)

    for tensor in (x, kernel.weight, offsets):
        assert check_gradient(loss, tensor, samples=40, rng=rng) < TOLERANCE


def test_dsconv_offset_predictor(rng):
    """With nonzero offset weights the predictor receives correct gradients."""
    module = DSConvModule(2, 2, k=3, rng=rng)
    for kernel in (module.kernel_x, module.kernel_y):
        kernel.offset_conv.weight.data[...] = rng.normal(scale=0.3, size=kernel.offset_conv.weight.shape)
    x = Parameter(rng.normal(size=(1, 2, 4, 4)))
    w = rng.normal(size=(1, 2, 4, 4))

    def loss():
        return weighted(module(x), w)

    for tensor in (module.kernel_x.offset_conv.weight, module.kernel_y.offset_conv.weight, x):
        assert check_gradient(loss, tensor, samples=30, rng=rng) < TOLERANCE


def _perturb(block, rng, scale=0.3):
    """Move zero-initialized projections off zero so upstream gradients are nonzero."""
    for p in block.plugin_parameters():
        if not np.any(p.data):
            p.data[...] = rng.normal(scale=scale, size=p.shape)


def test_loasp_block_end_to_end(rng):
    """Every plug-in tensor of a LoASP block matches finite differences."""
    block = LoASPBlock(Identity(8), r=2, hidden=8, k=3, rng=rng)
    _perturb(block, rng)
    x = Parameter(rng.normal(size=(2, 8, 4, 4)))
    w = rng.normal(size=(2, 8, 4, 4))

    def loss():
        return weighted(block(x), w)

    for name, tensor in block.named_parameters():
        assert check_gradient(loss, tensor, samples=12, rng=rng) < TOLERANCE, name
    assert check_gradient(loss, x, samples=20, rng=rng) < TOLERANCE


@pytest.mark.parametrize("prior,fusion", [("lora", "adapter"), ("dsconv", "add"), ("loasp", "adapter")])
def test_ablation_cells(rng, prior, fusion):
    """Baseline cells differentiate through prior and fusion."""
    config = RunConfig(loasp=LoASPConfig(r=2, c_hidden=8), dsconv=DSConvConfig(k=3))
    block = wrap_block(Identity(8), prior, fusion, config, rng)
    _perturb(block, rng)
    x = Parameter(rng.normal(size=(2, 8, 4, 4)))
    w = rng.normal(size=(2, 8, 4, 4))

    def loss():
        return weighted(block(x), w)

    for name, tensor in block.named_parameters():
        assert check_gradient(loss, tensor, samples=12, rng=rng) < TOLERANCE, name
