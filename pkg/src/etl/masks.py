"""Irregular hole masks for inpainter training and perturbation experiments."""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Tuple

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

from src.utils.errors import ConfigurationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MaskConfig:
    """Stroke and blob parameters plus the accepted hole-fraction range."""

    stroke_count_range: Tuple[int, int] = (1, 4)
    stroke_width_range: Tuple[int, int] = (2, 6)
    stroke_vertex_range: Tuple[int, int] = (2, 5)
    stroke_max_step: int = 16
    blob_count_range: Tuple[int, int] = (0, 3)
    blob_radius_range: Tuple[int, int] = (2, 7)
    fraction_range: Tuple[float, float] = (0.02, 0.25)
    max_tries: int = 50

    @classmethod
    def from_section(cls, section: Dict[str, Any]) -> "MaskConfig":
        unknown = set(section) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"Unknown masks keys: {sorted(unknown)}")
        cfg = cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in section.items()})
        cfg.validate()
        return cfg

    def validate(self) -> None:
        for name in ('stroke_count_range', 'stroke_width_range', 'stroke_vertex_range',
                     'blob_count_range', 'blob_radius_range'):
            lo, hi = getattr(self, name)
            if lo < 0 or lo > hi:
                raise ConfigurationError(f"{name} is empty or negative: {(lo, hi)}")
        f_min, f_max = self.fraction_range
        if not (0.0 <= f_min <= f_max <= 1.0) or f_max <= 0.0:
            raise ConfigurationError(f"Infeasible fraction_range: {self.fraction_range}")
        if self.max_tries < 1:
            raise ConfigurationError("max_tries must be at least 1")


def _draw(rng: np.random.Generator, shape: Tuple[int, int], cfg: MaskConfig) -> np.ndarray:
    h, w = shape
    canvas = Image.new('L', (w, h), 0)
    draw = ImageDraw.Draw(canvas)

    for _ in range(int(rng.integers(cfg.stroke_count_range[0], cfg.stroke_count_range[1] + 1))):
        width = int(rng.integers(cfg.stroke_width_range[0], cfg.stroke_width_range[1] + 1))
        n_vertices = int(rng.integers(cfg.stroke_vertex_range[0], cfg.stroke_vertex_range[1] + 1))
        x, y = float(rng.uniform(0, w)), float(rng.uniform(0, h))
        points = [(x, y)]
        for _ in range(max(n_vertices - 1, 1)):
            angle = rng.uniform(0, 2 * np.pi)
            step = rng.uniform(1, cfg.stroke_max_step)
            x = float(np.clip(x + step * np.cos(angle), 0, w - 1))
            y = float(np.clip(y + step * np.sin(angle), 0, h - 1))
            points.append((x, y))
        draw.line(points, fill=255, width=width, joint='curve')

    blobs = np.zeros(shape, dtype=bool)
    for _ in range(int(rng.integers(cfg.blob_count_range[0], cfg.blob_count_range[1] + 1))):
        radius = int(rng.integers(cfg.blob_radius_range[0], cfg.blob_radius_range[1] + 1))
        seeds = np.zeros(shape, dtype=bool)
        r0, c0 = int(rng.integers(h)), int(rng.integers(w))
        # A few jittered seed points dilated together give a lumpy blob
        for _ in range(3):
            r = int(np.clip(r0 + rng.integers(-radius, radius + 1), 0, h - 1))
            c = int(np.clip(c0 + rng.integers(-radius, radius + 1), 0, w - 1))
            seeds[r, c] = True
        disk = np.hypot(*np.ogrid[-radius:radius + 1, -radius:radius + 1]) <= radius
        blobs |= ndimage.binary_dilation(seeds, structure=disk)

    return (np.array(canvas) > 0) | blobs


def generate_irregular_mask(seed: int, config: MaskConfig, shape: Tuple[int, int]) -> np.ndarray:
    """Union of thick random polylines and dilated blobs; hole fraction within ``fraction_range``.

    Deterministic in ``seed``. Empty or out-of-range draws are resampled from the same
    generator; after ``max_tries`` failures a ConfigurationError is raised.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    f_min, f_max = config.fraction_range
    area = float(shape[0] * shape[1])
    for _ in range(config.max_tries):
        mask = _draw(rng, shape, config)
        fraction = mask.sum() / area
        if mask.any() and f_min <= fraction <= f_max:
            return mask
    raise ConfigurationError(
        f"No mask with hole fraction in {config.fraction_range} after {config.max_tries} tries"
    )
