"""Procedural fundus-like images with rule-based grades and per-domain styles.

Generation is split into geometry (disc, vessels, lesions), which depends only
on (global seed, seed index), and style (gamma, illumination, blur, tint,
noise), which also depends on the domain. Every sample draws from its own
SplitMix64-derived stream, so results never depend on generation order or on
the number of worker processes.
"""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy import ndimage

from loasp.types.data import DomainSpec, LesionInventory, SyntheticSample
from loasp.types.errors import ConfigurationError, ContractViolation

logger = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1
GRADE_SALT = 0x5DEECE66D
TEST_OFFSET = 500_000
DOMAIN_STRIDE = 1_000_000

DOMAIN_PRESETS: Dict[str, DomainSpec] = {
    "A": DomainSpec(domain_id="A"),
    "B": DomainSpec(
        domain_id="B", gamma=0.7, tint=(0.08, -0.02, -0.05), blur_sigma=0.6,
        noise_sigma=0.03, vessel_scale=1.3, illumination=0.15,
    ),
    "C": DomainSpec(
        domain_id="C", gamma=1.4, tint=(-0.05, 0.04, 0.08), blur_sigma=1.0,
        noise_sigma=0.05, vessel_scale=0.8, illumination=0.25,
    ),
    "D": DomainSpec(
        domain_id="D", gamma=1.8, tint=(0.1, 0.05, -0.08), blur_sigma=1.5,
        noise_sigma=0.08, vessel_scale=1.5, illumination=0.35,
    ),
}

FUNDUS_RGB = np.array([0.55, 0.25, 0.12])
VESSEL_RGB = np.array([0.35, 0.08, 0.05])
# (color, radius) per lesion type
LESION_STYLE = {
    "microaneurysm": (np.array([0.30, 0.02, 0.02]), 0.02),
    "hemorrhage": (np.array([0.35, 0.04, 0.03]), 0.05),
    "hard_exudate": (np.array([0.85, 0.75, 0.30]), 0.025),
    "soft_exudate": (np.array([0.80, 0.70, 0.55]), 0.07),
}


def splitmix64(value: int) -> int:
    """SplitMix64 finalizer over a 64-bit integer."""
    z = (value + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _domain_digest(domain_id: str) -> int:
    return int.from_bytes(hashlib.blake2b(domain_id.encode("utf-8"), digest_size=8).digest(), "little")


def geometry_rng(global_seed: int, seed_index: int) -> np.random.Generator:
    return np.random.default_rng(splitmix64((global_seed ^ seed_index) & _MASK64))


def style_rng(global_seed: int, seed_index: int, domain_id: str) -> np.random.Generator:
    mixed = (global_seed ^ seed_index ^ _domain_digest(domain_id)) & _MASK64
    return np.random.default_rng(splitmix64(mixed))


def domain_spec(domain_id: str) -> DomainSpec:
    """Preset style of a named domain."""
    if domain_id not in DOMAIN_PRESETS:
        raise ConfigurationError(f"unknown domain {domain_id!r}", valid=sorted(DOMAIN_PRESETS))
    return DOMAIN_PRESETS[domain_id]


def assign_grade(inv: LesionInventory) -> int:
    """Severity grade 0-4 from lesion counts.

    4: neovascularization; 3: at least four hemorrhages or any soft exudate;
    2: any hemorrhage or hard exudate; 1: microaneurysms only; 0: none.
    """
    if inv.neovascular_tangles > 0:
        return 4
    if inv.hemorrhage_count >= 4 or inv.soft_exudate_count > 0:
        return 3
    if inv.hemorrhage_count > 0 or inv.hard_exudate_count > 0:
        return 2
    if inv.microaneurysm_count > 0:
        return 1
    return 0


def sample_inventory(grade: int, rng: np.random.Generator) -> LesionInventory:
    """Draw lesion counts whose grade is exactly ``grade``."""
    if grade == 0:
        return LesionInventory()
    if grade == 1:
        return LesionInventory(microaneurysm_count=int(rng.integers(1, 6)))
    if grade == 2:
        hemorrhages = int(rng.integers(0, 4))
        hard = int(rng.integers(0, 5))
        if hemorrhages == 0 and hard == 0:
            hard = 1
        return LesionInventory(
            microaneurysm_count=int(rng.integers(0, 6)),
            hemorrhage_count=hemorrhages,
            hard_exudate_count=hard,
        )
    hemorrhages = int(rng.integers(0, 9))
    soft = int(rng.integers(0, 4))
    if hemorrhages < 4 and soft == 0:
        soft = 1
    return LesionInventory(
        microaneurysm_count=int(rng.integers(0, 7)),
        hemorrhage_count=hemorrhages,
        hard_exudate_count=int(rng.integers(0, 6)),
        soft_exudate_count=soft,
        neovascular_tangles=int(rng.integers(1, 4)) if grade == 4 else 0,
    )


def _random_walk(rng: np.random.Generator, start: np.ndarray, steps: int, step: float, turn: float) -> np.ndarray:
    heading = rng.uniform(0.0, 2.0 * np.pi)
    points = np.empty((steps, 2))
    position = start.astype(np.float64)
    for i in range(steps):
        heading += rng.normal(0.0, turn)
        position = position + step * np.array([np.sin(heading), np.cos(heading)])
        points[i] = position
    return points


def _paint_path(image: np.ndarray, grid: np.ndarray, points: np.ndarray, width: float, color: np.ndarray) -> None:
    d2 = ((grid[:, :, None, :] - points[None, None, :, :]) ** 2).sum(axis=-1).min(axis=-1)
    alpha = np.exp(-d2 / (2.0 * width * width))[..., None]
    image *= 1.0 - alpha
    image += alpha * color


def _paint_blob(image: np.ndarray, grid: np.ndarray, center: np.ndarray, radius: float, color: np.ndarray) -> None:
    d2 = ((grid - center) ** 2).sum(axis=-1)
    alpha = np.exp(-d2 / (2.0 * radius * radius))[..., None]
    image *= 1.0 - alpha
    image += alpha * color


def _disc_point(rng: np.random.Generator, radius: float) -> np.ndarray:
    angle = rng.uniform(0.0, 2.0 * np.pi)
    distance = radius * np.sqrt(rng.uniform())
    return np.array([distance * np.sin(angle), distance * np.cos(angle)])


def render_geometry(
    global_seed: int,
    seed_index: int,
    grade_target: int,
    vessel_scale: float = 1.0,
    size: int = 64,
) -> Tuple[np.ndarray, LesionInventory]:
    """Draw disc, vessels and lesions; returns an (H, W, 3) image in [0, 0.85]."""
    rng = geometry_rng(global_seed, seed_index)
    inventory = sample_inventory(grade_target, rng)
    axis = np.linspace(-1.0, 1.0, size)
    yy, xx = np.meshgrid(axis, axis, indexing="ij")
    grid = np.stack([yy, xx], axis=-1)
    radius = np.sqrt(yy**2 + xx**2)
    inside = (radius <= 0.95)[..., None]

    image = FUNDUS_RGB * (1.0 - 0.35 * radius**2)[..., None]
    optic_disc = _disc_point(rng, 0.5)
    for _ in range(int(rng.integers(3, 8))):
        start = optic_disc + rng.normal(0.0, 0.05, size=2)
        path = _random_walk(rng, start, steps=40, step=0.05, turn=0.25)
        width = vessel_scale * rng.uniform(0.015, 0.035)
        _paint_path(image, grid, path, width, VESSEL_RGB)

    counts = {
        "microaneurysm": inventory.microaneurysm_count,
        "hemorrhage": inventory.hemorrhage_count,
        "hard_exudate": inventory.hard_exudate_count,
        "soft_exudate": inventory.soft_exudate_count,
    }
    for kind, count in counts.items():
        color, blob_radius = LESION_STYLE[kind]
        for _ in range(count):
            _paint_blob(image, grid, _disc_point(rng, 0.8), blob_radius, color)
    for _ in range(inventory.neovascular_tangles):
        center = _disc_point(rng, 0.7)
        for _ in range(4):
            tangle = _random_walk(rng, center, steps=8, step=0.02, turn=1.2)
            _paint_path(image, grid, tangle, 0.008 * vessel_scale, VESSEL_RGB)

    image = image * inside
    return image, inventory


def apply_style(image: np.ndarray, domain: DomainSpec, rng: np.random.Generator) -> np.ndarray:
    """Gamma, illumination gradient, blur, tint and noise, in that order."""
    size = image.shape[1]
    out = np.power(np.clip(image, 0.0, 1.0), domain.gamma)
    if domain.illumination > 0:
        ramp = np.linspace(-1.0, 1.0, size)[None, :, None]
        out = out * (1.0 + domain.illumination * ramp)
    out = np.clip(out, 0.0, 1.0)
    if domain.blur_sigma > 0:
        out = ndimage.gaussian_filter(out, sigma=(domain.blur_sigma, domain.blur_sigma, 0), mode="reflect")
    out = out + np.asarray(domain.tint)
    if domain.noise_sigma > 0:
        out = out + rng.normal(0.0, domain.noise_sigma, size=out.shape)
    return np.clip(out, 0.0, 1.0)


def generate_image(
    global_seed: int,
    seed_index: int,
    grade_target: int,
    domain: DomainSpec,
    size: int = 64,
) -> SyntheticSample:
    """Generate one sample; identical arguments give a byte-identical image.

    Raises:
        ContractViolation: If ``grade_target`` is outside 0..4.
    """
    if grade_target not in range(5):
        raise ContractViolation(f"grade must be in 0..4, got {grade_target}")
    geometry, inventory = render_geometry(global_seed, seed_index, grade_target, domain.vessel_scale, size)
    styled = apply_style(geometry, domain, style_rng(global_seed, seed_index, domain.domain_id))
    return SyntheticSample(
        image=np.ascontiguousarray(styled.transpose(2, 0, 1)),
        grade=assign_grade(inventory),
        inventory=inventory,
        domain_id=domain.domain_id,
        seed_index=seed_index,
    )


def grade_for(global_seed: int, seed_index: int) -> int:
    """Uniform grade draw for a dataset slot."""
    return splitmix64((global_seed ^ seed_index ^ GRADE_SALT) & _MASK64) % 5


def seed_indices(domain_id: str, split: str, count: int) -> List[int]:
    ordinal = sorted(DOMAIN_PRESETS).index(domain_spec(domain_id).domain_id)
    offset = TEST_OFFSET if split == "test" else 0
    return [ordinal * DOMAIN_STRIDE + offset + i for i in range(count)]


def _generate_slot(args: Tuple[int, int, str, int]) -> SyntheticSample:
    global_seed, seed_index, domain_id, size = args
    return generate_image(global_seed, seed_index, grade_for(global_seed, seed_index), domain_spec(domain_id), size)


def build_dataset(
    domain_id: str,
    split: str,
    count: int,
    global_seed: int,
    size: int = 64,
    workers: int = 1,
) -> List[SyntheticSample]:
    """Generate ``count`` samples of one domain and split.

    Args:
        domain_id: Preset domain name.
        split: ``"train"`` or ``"test"``; test samples use disjoint seed indices.
        count: Number of samples.
        global_seed: Dataset seed.
        size: Image height and width.
        workers: Worker processes; results do not depend on this.
    """
    if split not in ("train", "test"):
        raise ContractViolation(f"split must be 'train' or 'test', got {split!r}")
    jobs = [(global_seed, index, domain_id, size) for index in seed_indices(domain_id, split, count)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(_generate_slot, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        samples = [_generate_slot(job) for job in jobs]
    logger.debug("generated %d %s samples for domain %s", len(samples), split, domain_id)
    return samples


def stack_samples(samples: Sequence[SyntheticSample]) -> Tuple[np.ndarray, np.ndarray]:
    """Images (N, 3, H, W) and grades (N,) as arrays."""
    if not samples:
        raise ContractViolation("cannot stack an empty sample list")
    images = np.stack([s.image for s in samples])
    labels = np.array([s.grade for s in samples], dtype=np.int64)
    return images, labels
