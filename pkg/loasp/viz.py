"""Prior-map visualization: capture, smooth, colorize, write PPM.

The captured map is the projected prior at one block, taken after the
adaptive projector and before it is added to the host output.
"""

import logging
import math
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.ndimage import correlate1d

from loasp.backbone import ToyResNet
from loasp.blocks import PluggedBlock
from loasp.harness.synthetic import domain_spec, generate_image, grade_for, seed_indices
from loasp.numerics.tensor import Tensor, no_grad
from loasp.types.config import RunConfig
from loasp.types.errors import ConfigurationError, ContractViolation, ShapeError

logger = logging.getLogger(__name__)

# white at 0, (0.7, 0, 0) at 1, in 8-bit units
_RED_DROP = 76.5
_GREEN_BLUE_DROP = 255.0


def extract_prior_map(model: ToyResNet, image: np.ndarray, block_index: int) -> np.ndarray:
    """Channel-mean of the projected prior at ``block_index``, min-max normalized.

    Args:
        model: Backbone whose block at ``block_index`` carries a plug-in.
        image: One image, (3, H, W) or (1, 3, H, W).
        block_index: Block to visualize.

    Returns:
        Map (h, w) in [0, 1]; a constant map comes back as all zeros.

    Raises:
        ConfigurationError: If the block is out of range or has no plug-in.
    """
    batch = np.asarray(image)
    if batch.ndim == 3:
        batch = batch[None]
    if batch.ndim != 4 or batch.shape[0] != 1:
        raise ShapeError("extract_prior_map takes a single image", [np.asarray(image).shape])
    if not 0 <= block_index < len(model.blocks):
        raise ConfigurationError(f"block index {block_index} out of range", valid=range(len(model.blocks)))
    block = model.blocks[block_index]
    if not isinstance(block, PluggedBlock):
        raise ConfigurationError(f"block {block_index} has no plug-in attached")

    was_training = model.training
    model.eval()
    try:
        with no_grad():
            features = model.forward_until(Tensor(batch), block_index)
            prior = block.prior_output(features).data[0]
    finally:
        model.train(was_training)

    raw = prior.astype(np.float64).mean(axis=0)
    lo, hi = raw.min(), raw.max()
    if hi - lo <= 0.0:
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps on [-ceil(3σ), ceil(3σ)]."""
    if not sigma > 0:
        raise ContractViolation(f"sigma must be positive, got {sigma}")
    radius = math.ceil(3.0 * sigma)
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    weights = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return weights / weights.sum()


def gaussian_filter(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian smoothing with reflected borders."""
    kernel = gaussian_kernel(sigma)
    out = correlate1d(np.asarray(image, dtype=np.float64), kernel, axis=0, mode="reflect")
    return correlate1d(out, kernel, axis=1, mode="reflect")


def reds_colormap(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] to uint8 RGB on the white-to-dark-red ramp, rounding half up.

    Raises:
        ContractViolation: If any value is outside [0, 1] or not finite.

    Example:
        >>> reds_colormap(np.array([[0.5]]))[0, 0].tolist()
        [217, 128, 128]
    """
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)) or v.min(initial=0.0) < 0.0 or v.max(initial=0.0) > 1.0:
        raise ContractViolation("colormap input must lie in [0, 1]")
    red = np.floor(255.0 - v * _RED_DROP + 0.5)
    other = np.floor(255.0 - v * _GREEN_BLUE_DROP + 0.5)
    return np.stack([red, other, other], axis=-1).astype(np.uint8)


def write_ppm(image: np.ndarray, path: Union[str, Path]) -> Path:
    """Binary PPM (P6, maxval 255) from a (H, W, 3) uint8 array."""
    pixels = np.asarray(image)
    if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.dtype != np.uint8:
        raise ShapeError("write_ppm needs a (H, W, 3) uint8 image", [pixels.shape])
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    height, width, _ = pixels.shape
    target.write_bytes(f"P6\n{width} {height}\n255\n".encode("ascii") + np.ascontiguousarray(pixels).tobytes())
    return target


def render_prior_map(model: ToyResNet, image: np.ndarray, block_index: int, sigma: float) -> np.ndarray:
    smoothed = gaussian_filter(extract_prior_map(model, image, block_index), sigma)
    return reds_colormap(np.clip(smoothed, 0.0, 1.0))


def viz_sample(config: RunConfig) -> np.ndarray:
    """The test image ``viz.sample_index`` of ``viz.domain`` (default: first domain)."""
    domain = config.viz.domain or config.data.domains[0]
    if domain not in config.data.domains:
        raise ConfigurationError(f"viz.domain {domain!r} is not in data.domains", valid=config.data.domains)
    index = seed_indices(domain, "test", config.viz.sample_index + 1)[-1]
    seed = config.data.seed
    sample = generate_image(seed, index, grade_for(seed, index), domain_spec(domain), config.data.image_size)
    return sample.image


def visualize(
    config: RunConfig,
    output: Union[str, Path],
    state: Optional[dict] = None,
    image: Optional[np.ndarray] = None,
) -> Path:
    """Build the configured model, optionally load weights, and write its prior map.

    Args:
        config: Model and viz settings; the model seed is ``config.seeds[0]``.
        output: PPM path.
        state: Weights as returned by ``load_checkpoint``.
        image: Input image; defaults to ``viz_sample(config)``.
    """
    model = ToyResNet(config, seed=config.seeds[0])
    if state is not None:
        model.load_state_dict(state)
    picture = viz_sample(config) if image is None else image
    rgb = render_prior_map(model, picture, config.viz.block_index, config.viz.sigma)
    path = write_ppm(rgb, output)
    logger.info("wrote %s (%dx%d)", path, rgb.shape[1], rgb.shape[0])
    return path
