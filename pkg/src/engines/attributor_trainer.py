"""Attributor training on pathological images with frozen scorer and inpainter."""

import copy
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import torch

sys.path.append(str(Path(__file__).parent.parent.parent))

from src.engines.attribution_loss import ConstraintConfig, attribution_loss, marginalize
from src.etl.dataset import DatasetManifest
from src.etl.loader import DatasetLoader, SplitTensors
from src.eval.statistics import smoothed_decrease
from src.nets.attributor import AttributorConfig, AttributorModel, threshold_mask
from src.nets.inpainter import InpainterModel
from src.nets.scorer import ScorerModel
from src.utils.archive import load_archive, module_hash, save_archive
from src.utils.errors import ConfigurationError, DependencyError, RuntimeFailure

logger = logging.getLogger(__name__)

STAGE = 'attributor'
STEP_LOSS_WINDOW = 50
STEP_LOSS_HORIZON = 1000


@dataclass(frozen=True)
class AttributorTrainConfig:
    batch_size: int = 8
    epochs: int = 300
    base_learning_rate: float = 1e-6
    max_learning_rate: float = 1e-4
    cycle_steps: int = 200
    patience: int = 30

    @classmethod
    def from_section(cls, section: Dict[str, Any]) -> "AttributorTrainConfig":
        cfg = cls(**{k: section[k] for k in cls.__dataclass_fields__ if k in section})
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.batch_size < 1 or self.epochs < 0 or self.patience < 1 or self.cycle_steps < 1:
            raise ConfigurationError("attributor batch_size, patience, cycle_steps must be >= 1 and epochs >= 0")
        if not 0 < self.base_learning_rate <= self.max_learning_rate:
            raise ConfigurationError("attributor learning rates need 0 < base <= max")


def attributor_config_from_section(section: Dict[str, Any]) -> AttributorConfig:
    cfg = AttributorConfig(**{k: section[k] for k in AttributorConfig.__dataclass_fields__ if k in section})
    cfg.validate()
    return cfg


def resolve_area_budget(section: Dict[str, Any], train: SplitTensors) -> float:
    """Configured δ, or twice the mean lesion area of the pathological training images."""
    if section.get('area_budget') is not None:
        return float(section['area_budget'])
    pathological = train.pathological()
    if len(pathological) == 0:
        raise ConfigurationError("No pathological training images to derive the area budget from")
    return 2.0 * float(pathological.gt_masks.flatten(1).sum(1).mean())


def satisfaction_rate(model: AttributorModel, inpainter: InpainterModel, images: torch.Tensor,
                      cfg: ConstraintConfig, batch_size: int = 32) -> float:
    """Share of images with p(c|pi(M)) <= θ and area(M) <= δ under the binary mask."""
    if images.shape[0] == 0:
        return 0.0
    model.eval()
    hits = 0
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            batch = images[start:start + batch_size]
            binary = threshold_mask(model(batch), cfg.threshold).to(batch.dtype)
            counterfactual = marginalize(batch, binary, inpainter, cfg.threshold)
            scores = model.encoder(counterfactual)
            areas = binary.flatten(1).sum(1)
            hits += int(((scores <= cfg.theta) & (areas <= cfg.delta)).sum())
    return hits / images.shape[0]


def train_attributor(manifest: DatasetManifest, scorer: Optional[ScorerModel], inpainter: Optional[InpainterModel],
                     attr_cfg: AttributorConfig, constraints: ConstraintConfig, train_cfg: AttributorTrainConfig,
                     seed: int = 0, loader: Optional[DatasetLoader] = None) -> AttributorModel:
    """
    Fit gates, decoder and head; scorer and inpainter stay fixed.

    SGD with a triangular cyclic learning rate; early stopping keeps the
    decoder state with the best validation constraint-satisfaction rate.
    Step losses and per-epoch summaries are attached as ``model.step_losses``
    and ``model.training_history``.
    """
    if scorer is None or inpainter is None:
        raise ConfigurationError("Attributor training needs a trained scorer and inpainter")
    train_cfg.validate()
    constraints.validate(manifest.config.image_size)

    torch.manual_seed(seed)
    loader = loader or DatasetLoader(manifest)
    train = loader.load_split('train').pathological()
    val = loader.load_split('val').pathological()
    if len(train) == 0:
        raise ConfigurationError("Training split has no pathological samples")

    scorer.freeze()
    inpainter.freeze()
    scorer_hash = module_hash(scorer)
    inpainter_hash = module_hash(inpainter)

    model = AttributorModel(scorer, attr_cfg)
    model.reinitialize(torch.Generator().manual_seed(seed))
    optimizer = torch.optim.SGD(model.decoder_parameters(), lr=train_cfg.base_learning_rate)
    scheduler = torch.optim.lr_scheduler.CyclicLR(
        optimizer,
        base_lr=train_cfg.base_learning_rate,
        max_lr=train_cfg.max_learning_rate,
        step_size_up=train_cfg.cycle_steps,
        mode='triangular',
        cycle_momentum=False,
    )
    generator = torch.Generator().manual_seed(seed)

    history: List[Dict[str, Any]] = []
    step_losses: List[float] = []
    best_rate = -1.0
    best_state = copy.deepcopy(model.decoder_state_dict())
    stale = 0

    for epoch in range(train_cfg.epochs):
        model.train()
        order = torch.randperm(len(train), generator=generator)
        sums: Dict[str, float] = {}
        for start in range(0, len(train), train_cfg.batch_size):
            batch = train.images[order[start:start + train_cfg.batch_size]]
            optimizer.zero_grad()
            soft, pyramid = model.forward_with_pyramid(batch)
            s0 = model.encoder.head_score(pyramid.deepest)
            breakdown = attribution_loss(batch, soft, scorer, inpainter, constraints, epoch=epoch,
                                         score_original=s0)
            breakdown.total.backward()
            optimizer.step()
            scheduler.step()
            step_losses.append(float(breakdown.total))
            for key, value in breakdown.as_dict().items():
                sums[key] = sums.get(key, 0.0) + value * batch.shape[0]

        entry = {k: v / len(train) for k, v in sums.items()}
        rate = satisfaction_rate(model, inpainter, val.images, constraints) if len(val) else 0.0
        entry.update({'epoch': epoch, 'val_satisfaction': rate, 'learning_rate': scheduler.get_last_lr()[0]})
        history.append(entry)
        logger.info(
            f"Epoch {epoch}: total={entry['total']:.4f} phi={entry['phi']:.4f} psi={entry['psi']:.4f} "
            f"tv={entry['tv']:.4f} area={entry['area']:.1f} rho={entry['penalty_weight']:.1f} "
            f"val_satisfaction={rate:.3f}"
        )

        if rate > best_rate:
            best_rate = rate
            best_state = copy.deepcopy(model.decoder_state_dict())
            stale = 0
        else:
            stale += 1
            if stale >= train_cfg.patience:
                logger.info(f"Early stopping after epoch {epoch} (best val_satisfaction={best_rate:.3f})")
                break

    model.load_decoder_state_dict(best_state)
    model.eval()

    if module_hash(scorer) != scorer_hash or module_hash(inpainter) != inpainter_hash:
        raise RuntimeFailure("Frozen scorer or inpainter parameters changed during attributor training")
    logger.info("Scorer and inpainter parameter hashes unchanged")

    model.training_history = history
    model.step_losses = step_losses
    model.step_loss_decreasing = smoothed_decrease(step_losses[:STEP_LOSS_HORIZON], STEP_LOSS_WINDOW)
    model.best_val_satisfaction = max(best_rate, 0.0)
    logger.info(
        f"Step loss {'decreasing' if model.step_loss_decreasing else 'not decreasing'} in its "
        f"{STEP_LOSS_WINDOW}-step moving average over the first {min(len(step_losses), STEP_LOSS_HORIZON)} steps"
    )
    model.area_budget = constraints.delta
    return model


def save_attributor(model: AttributorModel, directory: Path, constraints: ConstraintConfig, config_hash: str,
                    dataset_fingerprint: str, classifier_hash: str, inpainter_hash: str) -> Path:
    return save_archive(directory, model.decoder_state_dict(), model.descriptor(), metadata={
        'stage': STAGE,
        'theta': constraints.theta,
        'area_budget': constraints.delta,
        'config_hash': config_hash,
        'dataset_fingerprint': dataset_fingerprint,
        'classifier_hash': classifier_hash,
        'inpainter_hash': inpainter_hash,
        'history': getattr(model, 'training_history', []),
        'step_loss_decreasing': getattr(model, 'step_loss_decreasing', None),
        'best_val_satisfaction': getattr(model, 'best_val_satisfaction', None),
    })


def load_attributor(directory: Path, scorer: ScorerModel) -> Tuple[AttributorModel, Dict[str, Any]]:
    """Rebuild the attributor around an already loaded scorer."""
    state, manifest = load_archive(directory, STAGE)
    if manifest.get('classifier_hash') not in (None, module_hash(scorer)):
        raise DependencyError("Attributor archive was trained on a different classifier: retrain attributor")
    arch = manifest['architecture']
    cfg = AttributorConfig(threshold=arch['threshold'], sigma_rbf=arch['sigma_rbf'], smoothing=arch['smoothing'],
                           merge=arch['merge'], init_std=arch['init_std'], epsilon=arch['epsilon'])
    model = AttributorModel(scorer, cfg)
    model.load_decoder_state_dict(state)
    model.area_budget = manifest.get('area_budget')
    model.eval()
    return model, manifest
