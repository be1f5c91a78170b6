"""Tests for prior-map rendering."""

import numpy as np
import pytest

from loasp.backbone import ToyResNet
from loasp.types.config import AblationConfig, VizConfig
from loasp.types.errors import ConfigurationError, ContractViolation, ShapeError
from loasp.viz import (
    extract_prior_map,
    gaussian_filter,
    gaussian_kernel,
    reds_colormap,
    visualize,
    viz_sample,
    write_ppm,
)


def read_ppm(path):
    blob = path.read_bytes()
    magic, size, maxval, pixels = blob.split(b"\n", 3)
    width, height = (int(v) for v in size.split())
    assert (magic, maxval) == (b"P6", b"255")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width, 3)


class TestColormap:
    """White-to-red ramp."""

    def test_reference_values(self):
        """0 is white, 0.5 is (217, 128, 128), 1 is (179, 0, 0)."""
        rgb = reds_colormap(np.array([[0.0, 0.5, 1.0]]))
        assert rgb.dtype == np.uint8
        assert rgb[0].tolist() == [[255, 255, 255], [217, 128, 128], [179, 0, 0]]

    def test_monotone_darkening(self):
        """Higher values never get lighter."""
        rgb = reds_colormap(np.linspace(0.0, 1.0, 101)).astype(int)
        assert np.all(np.diff(rgb, axis=0) <= 0)

    @pytest.mark.parametrize("value", [-0.01, 1.01, np.nan])
    def test_out_of_range(self, value):
        """Inputs must be finite and in [0, 1]."""
        with pytest.raises(ContractViolation):
            reds_colormap(np.array([0.5, value]))


class TestGaussian:
    """Separable smoothing."""

    def test_kernel(self):
        """σ=1 gives seven symmetric taps summing to one, peaked at the center."""
        kernel = gaussian_kernel(1.0)
        assert kernel.shape == (7,)
        assert kernel.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(kernel, kernel[::-1])
        assert kernel.argmax() == 3

    def test_impulse_response(self):
        """An interior impulse spreads into the outer product of the kernel."""
        kernel = gaussian_kernel(1.5)
        image = np.zeros((21, 21))
        image[10, 10] = 1.0
        out = gaussian_filter(image, 1.5)
        r = len(kernel) // 2
        np.testing.assert_allclose(out[10 - r : 11 + r, 10 - r : 11 + r], np.outer(kernel, kernel), atol=1e-15)
        assert out.sum() == pytest.approx(1.0)

    def test_constant_is_fixed(self):
        """Reflected borders keep a constant image constant."""
        np.testing.assert_allclose(gaussian_filter(np.full((5, 9), 0.4), 2.0), 0.4)

    def test_commutes_with_transpose(self, rng):
        """Both axes use the same kernel."""
        image = rng.uniform(size=(6, 10))
        np.testing.assert_allclose(gaussian_filter(image.T, 1.0), gaussian_filter(image, 1.0).T, atol=1e-14)

    def test_sigma_must_be_positive(self):
        """σ = 0 has no kernel."""
        with pytest.raises(ContractViolation):
            gaussian_kernel(0.0)


class TestPriorMap:
    """Capture at one block."""

    def test_fresh_model_gives_blank_map(self, tiny_config):
        """Zero-initialized projections make a constant map, rendered as zeros."""
        model = ToyResNet(tiny_config)
        prior = extract_prior_map(model, viz_sample(tiny_config), 0)
        assert prior.shape == (8, 8)
        np.testing.assert_array_equal(prior, 0.0)

    def test_trained_projection_is_normalized(self, tiny_config, rng):
        """A nonzero projection gives a map spanning exactly [0, 1]."""
        model = ToyResNet(tiny_config)
        b_f = model.blocks[1].loap.b_f.weight
        b_f.data[...] = rng.normal(size=b_f.shape)
        prior = extract_prior_map(model, viz_sample(tiny_config), 1)
        assert prior.min() == 0.0 and prior.max() == 1.0
        assert model.training

    def test_any_plugged_cell(self, tiny_config, rng):
        """Baseline cells are visualized the same way."""
        cfg = tiny_config.model_copy(update={"ablation": AblationConfig(prior="lora", fusion="add")})
        model = ToyResNet(cfg)
        assert extract_prior_map(model, viz_sample(cfg), 2).shape == (4, 4)

    def test_unplugged_block(self, tiny_config):
        """The plain backbone has no prior to show."""
        cfg = tiny_config.model_copy(update={"ablation": AblationConfig(prior="none")})
        with pytest.raises(ConfigurationError, match="no plug-in"):
            extract_prior_map(ToyResNet(cfg), viz_sample(cfg), 0)

    def test_block_out_of_range(self, tiny_config):
        """Only the eight blocks can be visualized."""
        with pytest.raises(ConfigurationError):
            extract_prior_map(ToyResNet(tiny_config), viz_sample(tiny_config), 8)

    def test_single_image_only(self, tiny_config, rng):
        """Batches of more than one image are rejected."""
        with pytest.raises(ShapeError):
            extract_prior_map(ToyResNet(tiny_config), rng.uniform(size=(2, 3, 16, 16)), 0)

    def test_sample_domain_must_exist(self, tiny_config):
        """viz.domain must be one of the configured domains."""
        cfg = tiny_config.model_copy(update={"viz": VizConfig(domain="D")})
        with pytest.raises(ConfigurationError):
            viz_sample(cfg)


def test_write_ppm(tmp_path):
    """P6 header with width before height, then raw RGB."""
    pixels = np.arange(2 * 4 * 3, dtype=np.uint8).reshape(2, 4, 3)
    path = write_ppm(pixels, tmp_path / "out" / "map.ppm")
    assert path.read_bytes().startswith(b"P6\n4 2\n255\n")
    np.testing.assert_array_equal(read_ppm(path), pixels)
    with pytest.raises(ShapeError):
        write_ppm(pixels.astype(np.float64), tmp_path / "bad.ppm")


def test_visualize_fresh_model_is_white(tiny_config, tmp_path):
    """The end-to-end render of an untrained model is all white."""
    pixels = read_ppm(visualize(tiny_config, tmp_path / "prior.ppm"))
    assert pixels.shape == (8, 8, 3)
    assert np.all(pixels == 255)
