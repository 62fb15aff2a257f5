"""Inpainter training: two-phase schedule on healthy images with random irregular holes."""

import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

sys.path.append(str(Path(__file__).parent.parent.parent))

from src.etl.dataset import DatasetManifest
from src.etl.loader import DatasetLoader
from src.etl.masks import MaskConfig, generate_irregular_mask
from src.eval.statistics import smoothed_decrease
from src.nets.inpainter import PHASE_DECODER_BN, PHASE_FULL_BN, InpainterModel
from src.nets.scorer import FeaturePyramid, ScorerModel
from src.utils.archive import load_archive, save_archive
from src.utils.errors import ConfigurationError, ContractError

logger = logging.getLogger(__name__)

STAGE = 'inpainter'
DEFAULT_LOSS_WEIGHTS = {'valid': 1.0, 'hole': 6.0, 'perc': 0.05, 'style': 120.0, 'tv': 0.1}
LOSS_TREND_WINDOW = 20

FeatureExtractor = Union[ScorerModel, Callable[[torch.Tensor], Sequence[torch.Tensor]]]


@dataclass
class PciLossBreakdown:
    """Inpainting loss components (tensors, differentiable) and their weighted total."""

    l_valid: torch.Tensor
    l_hole: torch.Tensor
    l_perc: torch.Tensor
    l_style: torch.Tensor
    l_tv: torch.Tensor
    total: torch.Tensor
    weights: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_LOSS_WEIGHTS))

    def as_dict(self) -> Dict[str, float]:
        return {
            'l_valid': float(self.l_valid),
            'l_hole': float(self.l_hole),
            'l_perc': float(self.l_perc),
            'l_style': float(self.l_style),
            'l_tv': float(self.l_tv),
            'total': float(self.total),
        }


def _levels(extractor: Optional[FeatureExtractor], x: torch.Tensor) -> List[torch.Tensor]:
    if extractor is None:
        return []
    if isinstance(extractor, ScorerModel):
        return list(extractor.features(x).levels)
    result = extractor(x)
    return list(result.levels) if isinstance(result, FeaturePyramid) else list(result)


def gram_matrix(features: torch.Tensor) -> torch.Tensor:
    """F F^T / (C H W) per image."""
    n, c, h, w = features.shape
    flat = features.reshape(n, c, h * w)
    return flat @ flat.transpose(1, 2) / float(c * h * w)


def _masked_mae(diff: torch.Tensor, weight: torch.Tensor) -> torch.Tensor:
    count = weight.sum()
    if float(count) == 0.0:
        return diff.new_zeros(())
    return (diff.abs() * weight).sum() / count


def boundary_tv(image: torch.Tensor, hole_mask: torch.Tensor) -> torch.Tensor:
    """Total variation of ``image`` over neighbor pairs lying in the 1-pixel dilation of the hole,
    divided by the size of that region."""
    region = F.max_pool2d(hole_mask, kernel_size=3, stride=1, padding=1)
    size = region.sum()
    if float(size) == 0.0:
        return image.new_zeros(())
    horiz = (image[..., :, 1:] - image[..., :, :-1]).abs() * region[..., :, 1:] * region[..., :, :-1]
    vert = (image[..., 1:, :] - image[..., :-1, :]).abs() * region[..., 1:, :] * region[..., :-1, :]
    return (horiz.sum() + vert.sum()) / size


def pci_loss(prediction: torch.Tensor, target: torch.Tensor, hole_mask: torch.Tensor,
             feature_extractor: Optional[FeatureExtractor] = None,
             weights: Optional[Dict[str, float]] = None) -> PciLossBreakdown:
    """
    Inpainting loss on (N,1,H,W) grids; ``hole_mask`` is 1 inside holes.

    The composite used by the perceptual, style and TV terms takes target
    pixels outside the hole and raw prediction pixels inside it. Each
    perceptual and style level adds the raw-prediction error and the composite
    error against the target, so a prediction wrong everywhere counts twice
    inside the hole.
    """
    if prediction.shape != target.shape or hole_mask.shape != target.shape:
        raise ContractError(
            f"pci_loss shapes differ: {tuple(prediction.shape)}, {tuple(target.shape)}, {tuple(hole_mask.shape)}"
        )
    weights = dict(DEFAULT_LOSS_WEIGHTS, **(weights or {}))
    hole = hole_mask.to(prediction.dtype)
    valid = 1.0 - hole
    diff = prediction - target

    l_valid = _masked_mae(diff, valid)
    l_hole = _masked_mae(diff, hole)
    comp = target + hole * diff

    zero = prediction.new_zeros(())
    l_perc, l_style = zero, zero
    target_levels = _levels(feature_extractor, target)
    if target_levels:
        pred_levels = _levels(feature_extractor, prediction)
        comp_levels = _levels(feature_extractor, comp)
        perc_terms, style_terms = [], []
        for f_t, f_p, f_c in zip(target_levels, pred_levels, comp_levels):
            perc_terms.append((f_p - f_t).abs().mean() + (f_c - f_t).abs().mean())
            g_t = gram_matrix(f_t)
            style_terms.append((gram_matrix(f_p) - g_t).abs().mean() + (gram_matrix(f_c) - g_t).abs().mean())
        l_perc = torch.stack(perc_terms).mean()
        l_style = torch.stack(style_terms).mean()

    l_tv = boundary_tv(comp, hole)
    total = (weights['valid'] * l_valid + weights['hole'] * l_hole + weights['perc'] * l_perc
             + weights['style'] * l_style + weights['tv'] * l_tv)
    return PciLossBreakdown(l_valid, l_hole, l_perc, l_style, l_tv, total, weights)


@dataclass(frozen=True)
class InpainterTrainConfig:
    """The ``inpainter`` config section."""

    depths: Tuple[int, ...] = (32, 64, 128, 256, 256)
    kernel_sizes: Tuple[int, ...] = (7, 5, 5, 3, 3)
    batch_size: int = 16
    phase1_epochs: int = 40
    phase2_epochs: int = 20
    phase1_learning_rate: float = 2e-4
    phase2_learning_rate: float = 1e-5
    loss_weights: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_LOSS_WEIGHTS))

    @classmethod
    def from_section(cls, section: Dict[str, Any]) -> "InpainterTrainConfig":
        unknown = set(section) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"Unknown inpainter keys: {sorted(unknown)}")
        cfg = cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in section.items()})
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigurationError("inpainter.batch_size must be at least 1")
        if self.phase1_epochs < 0 or self.phase2_epochs < 0:
            raise ConfigurationError("inpainter epochs must be non-negative")
        if self.phase1_learning_rate <= 0 or self.phase2_learning_rate <= 0:
            raise ConfigurationError("inpainter learning rates must be positive")
        unknown = set(self.loss_weights) - set(DEFAULT_LOSS_WEIGHTS)
        if unknown:
            raise ConfigurationError(f"Unknown loss weight names: {sorted(unknown)}")


def hole_batch(rng: np.random.Generator, count: int, mask_config: MaskConfig,
               shape: Tuple[int, int], dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(count,1,H,W) irregular holes, one fresh seed each."""
    seeds = rng.integers(0, 2 ** 31 - 1, size=count)
    masks = [generate_irregular_mask(int(s), mask_config, shape) for s in seeds]
    return torch.as_tensor(np.stack(masks)[:, None], dtype=dtype)


def reconstruction_mae(model: InpainterModel, images: torch.Tensor) -> float:
    """Raw-output MAE with nothing masked."""
    model.eval()
    with torch.no_grad():
        pred = model(images, torch.ones_like(images))
    return float((pred - images).abs().mean())


def _run_phase(model: InpainterModel, phase: int, epochs: int, learning_rate: float, images: torch.Tensor,
               extractor: ScorerModel, mask_config: MaskConfig, config: InpainterTrainConfig,
               rng: np.random.Generator, generator: torch.Generator, history: List[Dict[str, Any]]) -> None:
    model.set_phase(phase)
    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(params, lr=learning_rate)
    shape = tuple(images.shape[-2:])
    n = images.shape[0]

    for epoch in range(epochs):
        model.train()
        order = torch.randperm(n, generator=generator)
        sums: Dict[str, float] = {}
        for start in range(0, n, config.batch_size):
            batch = images[order[start:start + config.batch_size]]
            hole = hole_batch(rng, batch.shape[0], mask_config, shape, batch.dtype)
            optimizer.zero_grad()
            breakdown = pci_loss(model(batch, 1.0 - hole), batch, hole, extractor, config.loss_weights)
            breakdown.total.backward()
            optimizer.step()
            for key, value in breakdown.as_dict().items():
                sums[key] = sums.get(key, 0.0) + value * batch.shape[0]

        entry = {'phase': phase, 'epoch': len(history)}
        entry.update({k: v / n for k, v in sums.items()})
        history.append(entry)
        logger.info(
            f"Phase {phase} epoch {epoch}: total={entry['total']:.4f} valid={entry['l_valid']:.4f} "
            f"hole={entry['l_hole']:.4f} perc={entry['l_perc']:.4f} style={entry['l_style']:.5f} tv={entry['l_tv']:.4f}"
        )


def train_inpainter(manifest: DatasetManifest, scorer: ScorerModel, config: InpainterTrainConfig,
                    mask_config: MaskConfig, seed: int = 0,
                    loader: Optional[DatasetLoader] = None) -> InpainterModel:
    """
    Train on healthy training images only.

    Phase 1 trains batch norm everywhere; phase 2 continues at the lower rate
    with contraction-path batch norm frozen. The frozen scorer provides the
    feature levels of the perceptual and style terms. The loss history is
    attached as ``model.loss_history``.
    """
    config.validate()
    mask_config.validate()
    torch.manual_seed(seed)
    loader = loader or DatasetLoader(manifest)
    healthy = loader.load_split('train').healthy()
    if len(healthy) == 0:
        raise ConfigurationError("Training split has no healthy samples to train the inpainter on")

    scorer.freeze()
    model = InpainterModel(input_size=manifest.config.image_size, depths=config.depths,
                           kernel_sizes=config.kernel_sizes)
    rng = np.random.default_rng(seed)
    generator = torch.Generator().manual_seed(seed)
    history: List[Dict[str, Any]] = []

    _run_phase(model, PHASE_FULL_BN, config.phase1_epochs, config.phase1_learning_rate, healthy.images,
               scorer, mask_config, config, rng, generator, history)
    _run_phase(model, PHASE_DECODER_BN, config.phase2_epochs, config.phase2_learning_rate, healthy.images,
               scorer, mask_config, config, rng, generator, history)

    val_healthy = loader.load_split('val').healthy()
    model.validation_mae = reconstruction_mae(model, val_healthy.images) if len(val_healthy) else None
    if model.validation_mae is not None:
        logger.info(f"Empty-mask reconstruction MAE on validation: {model.validation_mae:.4f}")
    else:
        logger.warning("Validation split has no healthy samples; reconstruction MAE not measured")

    model.loss_decreasing = smoothed_decrease([e['total'] for e in history], LOSS_TREND_WINDOW, monotone=True)
    logger.info(f"Loss {'is' if model.loss_decreasing else 'is not'} monotone in its "
                f"{LOSS_TREND_WINDOW}-epoch moving average")

    model.eval()
    model.loss_history = history
    return model


def save_inpainter(model: InpainterModel, directory: Path, config_hash: str, dataset_fingerprint: str,
                   classifier_hash: str) -> Path:
    return save_archive(directory, model.state_dict(), model.descriptor(), metadata={
        'stage': STAGE,
        'phase': int(model.phase),
        'config_hash': config_hash,
        'dataset_fingerprint': dataset_fingerprint,
        'classifier_hash': classifier_hash,
        'loss_history': getattr(model, 'loss_history', []),
        'validation_mae': getattr(model, 'validation_mae', None),
        'loss_decreasing': getattr(model, 'loss_decreasing', None),
    })


def load_inpainter(directory: Path) -> Tuple[InpainterModel, Dict[str, Any]]:
    state, manifest = load_archive(directory, STAGE)
    model = InpainterModel.from_descriptor(manifest['architecture'])
    model.load_state_dict(state)
    model.set_phase(manifest.get('phase', PHASE_DECODER_BN))
    return model.freeze(), manifest
