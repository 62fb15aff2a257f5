"""Synthetic lesion phantoms: textured "healthy" images and images with compact bright lesions."""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Tuple

import numpy as np
from scipy import ndimage

from src.utils.errors import ConfigurationError
from src.utils.imaging import quantize16

HEALTHY = 0
PATHOLOGICAL = 1
LABEL_NAMES = {HEALTHY: 'healthy', PATHOLOGICAL: 'pathological'}

PLACEMENT_TRIES = 200


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the phantom generator (the ``data`` config section)."""

    image_size: Tuple[int, int] = (64, 64)
    n_healthy: int = 450
    n_pathological: int = 450
    split_fractions: Tuple[float, float, float] = (0.666667, 0.111111, 0.222222)
    lesion_count_range: Tuple[int, int] = (1, 2)
    lesion_radius_range: Tuple[int, int] = (4, 6)
    lesion_sharpness: float = 4.0
    contrast: float = 0.35
    base_intensity: float = 0.4
    background_smoothness: float = 8.0
    background_amplitude: float = 0.08
    noise_amplitude: float = 0.02
    organ_ellipse: bool = True
    organ_semi_axes: Tuple[float, float] = (0.46, 0.42)
    outside_intensity: float = 0.05
    master_seed: int = 20201

    @classmethod
    def from_section(cls, section: Dict[str, Any]) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(section) - known
        if unknown:
            raise ConfigurationError(f"Unknown data keys: {sorted(unknown)}")
        values = {k: tuple(v) if isinstance(v, list) else v for k, v in section.items()}
        cfg = cls(**values)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        h, w = self.image_size
        if h < 8 or w < 8:
            raise ConfigurationError(f"image_size too small: {self.image_size}")
        for name in ('lesion_count_range', 'lesion_radius_range'):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigurationError(f"{name} is empty: {(lo, hi)}")
        if self.lesion_count_range[0] < 1:
            raise ConfigurationError("lesion_count_range must start at 1 or more")
        if self.lesion_radius_range[0] < 1:
            raise ConfigurationError("lesion_radius_range must start at 1 or more")
        if self.n_healthy < 0 or self.n_pathological < 0:
            raise ConfigurationError("sample counts must be non-negative")
        if len(self.split_fractions) != 3 or any(f < 0 for f in self.split_fractions):
            raise ConfigurationError(f"split_fractions must be three non-negative values: {self.split_fractions}")
        if abs(sum(self.split_fractions) - 1.0) > 1e-3:
            raise ConfigurationError(f"split_fractions must sum to 1: {self.split_fractions}")
        if not 0.0 < self.contrast <= 1.0:
            raise ConfigurationError(f"contrast must lie in (0,1]: {self.contrast}")
        if self.contrast <= self.noise_amplitude:
            raise ConfigurationError("contrast must exceed noise_amplitude or lesions are not learnable")
        if self.lesion_sharpness < 2.0:
            raise ConfigurationError("lesion_sharpness below 2 gives lesions without a visible rim")
        if self.background_smoothness <= 0:
            raise ConfigurationError("background_smoothness must be positive")


@dataclass
class LabeledImage:
    """One sample: grayscale pixels in [0,1], class label and ground-truth masks."""

    pixels: np.ndarray
    label: int
    gt_mask: np.ndarray
    seed: int
    organ_mask: np.ndarray = None
    lesion_centers: List[Tuple[int, int]] = field(default_factory=list)

    @property
    def is_pathological(self) -> bool:
        return self.label == PATHOLOGICAL

    @property
    def lesion_area(self) -> int:
        return int(self.gt_mask.sum())


def organ_mask_for(cfg: SynthConfig) -> np.ndarray:
    """Elliptical tissue region (or the full image when the organ is disabled)."""
    h, w = cfg.image_size
    if not cfg.organ_ellipse:
        return np.ones((h, w), dtype=bool)
    rows, cols = np.ogrid[:h, :w]
    a = cfg.organ_semi_axes[0] * h
    b = cfg.organ_semi_axes[1] * w
    return ((rows - (h - 1) / 2.0) / a) ** 2 + ((cols - (w - 1) / 2.0) / b) ** 2 <= 1.0


def lesion_field(shape: Tuple[int, int], center: Tuple[float, float], radius: float,
                 amplitude: float, sharpness: float) -> np.ndarray:
    """Generalized Gaussian bump ``amplitude * 2^-(d/r)^s``; half its peak exactly at ``d = r``."""
    rows, cols = np.ogrid[:shape[0], :shape[1]]
    dist = np.sqrt((rows - center[0]) ** 2 + (cols - center[1]) ** 2)
    return amplitude * np.power(2.0, -np.power(dist / radius, sharpness))


def _background(rng: np.random.Generator, cfg: SynthConfig) -> np.ndarray:
    h, w = cfg.image_size
    field_ = ndimage.gaussian_filter(rng.normal(size=(h, w)), sigma=cfg.background_smoothness, mode='reflect')
    field_ = field_ / (field_.std() + 1e-12)
    return cfg.base_intensity + cfg.background_amplitude * field_


def _place_lesions(rng: np.random.Generator, cfg: SynthConfig, organ: np.ndarray) -> List[Tuple[int, int, int]]:
    """Draw (row, col, radius) triples inside the organ, far enough apart to stay separate components."""
    h, w = cfg.image_size
    count = int(rng.integers(cfg.lesion_count_range[0], cfg.lesion_count_range[1] + 1))
    # Distance to the organ boundary keeps the lesion and its 3-pixel ring on tissue
    inside = ndimage.distance_transform_edt(np.pad(organ, 1, constant_values=False))[1:-1, 1:-1]
    placed: List[Tuple[int, int, int]] = []
    for _ in range(count):
        radius = int(rng.integers(cfg.lesion_radius_range[0], cfg.lesion_radius_range[1] + 1))
        margin = radius + 4
        candidates = np.argwhere(inside > margin)
        for _ in range(PLACEMENT_TRIES):
            if len(candidates) == 0:
                break
            r, c = candidates[int(rng.integers(len(candidates)))]
            if all(math.hypot(r - pr, c - pc) > radius + pradius + 6 for pr, pc, pradius in placed):
                placed.append((int(r), int(c), radius))
                break
        else:
            raise ConfigurationError(
                f"Could not place {count} lesions of radius up to {cfg.lesion_radius_range[1]} "
                f"in a {h}x{w} image"
            )
        if len(candidates) == 0:
            raise ConfigurationError(f"Lesion radius {radius} does not fit inside the organ")
    return placed


def generate_sample(seed: int, label: int, config: SynthConfig) -> LabeledImage:
    """Deterministic phantom for (seed, label, config)."""
    config.validate()
    if label not in LABEL_NAMES:
        raise ConfigurationError(f"Unknown label: {label}")
    rng = np.random.default_rng(seed)
    shape = tuple(config.image_size)
    organ = organ_mask_for(config)

    pixels = _background(rng, config)
    gt_mask = np.zeros(shape, dtype=bool)
    centers: List[Tuple[int, int]] = []
    if label == PATHOLOGICAL:
        for r, c, radius in _place_lesions(rng, config, organ):
            bump = lesion_field(shape, (r, c), radius, config.contrast, config.lesion_sharpness)
            pixels = pixels + bump
            gt_mask |= bump >= 0.5 * config.contrast
            centers.append((r, c))

    pixels = pixels + config.noise_amplitude * rng.normal(size=shape)
    outside = config.outside_intensity + config.noise_amplitude * rng.normal(size=shape)
    pixels = np.where(organ, pixels, outside)

    return LabeledImage(
        pixels=quantize16(pixels),
        label=label,
        gt_mask=gt_mask,
        seed=int(seed),
        organ_mask=organ.copy(),
        lesion_centers=centers,
    )


def ring_contrast(sample: LabeledImage, width: int = 3) -> float:
    """Mean intensity inside gt_mask minus mean in a ``width``-pixel ring outside it."""
    if not sample.gt_mask.any():
        return 0.0
    dilated = ndimage.binary_dilation(sample.gt_mask, structure=np.ones((3, 3), bool), iterations=width)
    ring = dilated & ~sample.gt_mask
    return float(sample.pixels[sample.gt_mask].mean() - sample.pixels[ring].mean())
