"""PNG input/output for images, masks and heatmap overlays."""

from pathlib import Path

import numpy as np
from PIL import Image

from src.utils.errors import ContractError, PersistenceError

UINT16_MAX = 65535


def quantize16(pixels: np.ndarray) -> np.ndarray:
    """Snap [0,1] intensities onto the 16-bit grid so PNG round trips are exact."""
    return np.round(np.clip(pixels, 0.0, 1.0) * UINT16_MAX) / UINT16_MAX


def save_gray16(path: Path, pixels: np.ndarray) -> Path:
    """Save a [0,1] float grid as a 16-bit grayscale PNG."""
    if pixels.ndim != 2:
        raise ContractError(f"Expected a 2-D grid, got shape {pixels.shape}")
    data = np.round(np.clip(pixels, 0.0, 1.0) * UINT16_MAX).astype(np.uint16)
    return _save(path, Image.fromarray(data))


def load_gray16(path: Path) -> np.ndarray:
    """Load a 16-bit grayscale PNG as float64 in [0,1]."""
    with _open(path) as img:
        data = np.array(img)
    if data.ndim != 2:
        raise PersistenceError(f"{path} is not a single-channel image")
    return data.astype(np.uint16).astype(np.float64) / UINT16_MAX


def load_image(path: Path) -> np.ndarray:
    """Load any grayscale PNG (8- or 16-bit) as float64 in [0,1]; color images are converted to luminance."""
    with _open(path) as img:
        if img.mode in ('I;16', 'I;16B', 'I;16L', 'I'):
            return np.array(img).astype(np.float64).clip(0, UINT16_MAX) / UINT16_MAX
        return np.array(img.convert('L')).astype(np.float64) / 255.0


def save_mask8(path: Path, mask: np.ndarray) -> Path:
    """Save a binary mask as an 8-bit PNG with foreground = 255."""
    data = np.where(np.asarray(mask) > 0, 255, 0).astype(np.uint8)
    return _save(path, Image.fromarray(data, mode='L'))


def load_mask8(path: Path) -> np.ndarray:
    """Load an 8-bit mask PNG as a boolean grid."""
    with _open(path) as img:
        data = np.array(img.convert('L'))
    return data > 127


def save_overlay(path: Path, pixels: np.ndarray, heat: np.ndarray, alpha: float = 0.5) -> Path:
    """Alpha-blend a [0,1] heatmap in red over a grayscale image."""
    if pixels.shape != heat.shape:
        raise ContractError(f"Overlay shapes differ: {pixels.shape} vs {heat.shape}")
    gray = np.clip(pixels, 0.0, 1.0)
    weight = alpha * np.clip(heat, 0.0, 1.0)
    rgb = np.stack([gray, gray, gray], axis=-1)
    red = np.zeros_like(rgb)
    red[..., 0] = 1.0
    blended = (1.0 - weight[..., None]) * rgb + weight[..., None] * red
    return _save(path, Image.fromarray(np.round(blended * 255).astype(np.uint8), mode='RGB'))


def _save(path: Path, img: Image.Image) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        img.save(path, format='PNG')
    except OSError as e:
        raise PersistenceError(f"Could not write {path}: {e}") from e
    return path


def _open(path: Path) -> Image.Image:
    path = Path(path)
    if not path.exists():
        raise PersistenceError(f"Image not found: {path}")
    try:
        return Image.open(path)
    except OSError as e:
        raise PersistenceError(f"Could not read {path}: {e}") from e
