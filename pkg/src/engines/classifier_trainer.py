"""Classifier training: Adam on binary cross-entropy with early stopping on validation loss."""

import copy
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch.utils.data import DataLoader

sys.path.append(str(Path(__file__).parent.parent.parent))

from src.etl.dataset import DatasetManifest
from src.etl.loader import DatasetLoader, SplitTensors
from src.eval.metrics import roc_auc, youden_threshold
from src.nets.scorer import ScorerModel
from src.utils.archive import load_archive, save_archive
from src.utils.errors import ConfigurationError, ContractError

# Configure logger
logger = logging.getLogger(__name__)

STAGE = 'classifier'


@dataclass(frozen=True)
class ClassifierTrainConfig:
    """The ``classifier`` config section."""

    widths: Tuple[int, ...] = (16, 32, 64, 128)
    activation: str = 'relu'
    batch_size: int = 32
    epochs: int = 30
    learning_rate: float = 1e-3
    patience: int = 5
    shuffle_labels: bool = False

    @classmethod
    def from_section(cls, section: Dict[str, Any]) -> "ClassifierTrainConfig":
        unknown = set(section) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"Unknown classifier keys: {sorted(unknown)}")
        cfg = cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in section.items()})
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigurationError("classifier.batch_size must be at least 1")
        if self.epochs < 0:
            raise ConfigurationError("classifier.epochs must be non-negative")
        if self.learning_rate <= 0:
            raise ConfigurationError("classifier.learning_rate must be positive")
        if self.patience < 1:
            raise ConfigurationError("classifier.patience must be at least 1")


def predict_scores(model: ScorerModel, images: torch.Tensor, batch_size: int = 64) -> np.ndarray:
    """p(c|I) for a stack of images, in evaluation mode."""
    was_training = model.training
    model.eval()
    out = []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            out.append(model(images[start:start + batch_size]).double().cpu().numpy())
    model.train(was_training)
    return np.concatenate(out) if out else np.zeros(0)


def _validation_loss(model: ScorerModel, split: SplitTensors, labels: torch.Tensor, batch_size: int) -> float:
    model.eval()
    total = 0.0
    with torch.no_grad():
        for start in range(0, len(split), batch_size):
            images = split.images[start:start + batch_size]
            targets = labels[start:start + batch_size].to(images.dtype)
            total += float(F.binary_cross_entropy_with_logits(model.logit(images), targets, reduction='sum'))
    return total / max(len(split), 1)


def _safe_auc(scores: np.ndarray, labels: np.ndarray) -> Optional[float]:
    try:
        return roc_auc(scores, labels)
    except ContractError:
        return None


def train_classifier(manifest: DatasetManifest, config: ClassifierTrainConfig, seed: int = 0,
                     loader: Optional[DatasetLoader] = None) -> ScorerModel:
    """
    Train the scorer on the train split.

    The head starts at zero, so an untrained scorer gives 0.5 for every image.
    Validation AUC is logged per epoch; the weights with the lowest validation
    loss are kept. With ``shuffle_labels`` both train and validation labels
    are permuted. θ is set at the validation point maximizing Youden's J.
    The per-epoch history is attached as ``model.training_history``.
    """
    config.validate()
    torch.manual_seed(seed)
    loader = loader or DatasetLoader(manifest)
    train = loader.load_split('train')
    val = loader.load_split('val')

    if len(torch.unique(train.labels)) < 2:
        raise ConfigurationError("Training split must contain both healthy and pathological samples")

    labels, val_labels = train.labels, val.labels
    if config.shuffle_labels:
        labels, val_labels = train.shuffled_labels(seed + 1), val.shuffled_labels(seed + 2)
        logger.warning("Training and validating with shuffled labels (control run)")

    model = ScorerModel(input_size=manifest.config.image_size, widths=config.widths,
                        activation=config.activation).zero_head()
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    batches = DataLoader(
        train.as_dataset(labels),
        batch_size=config.batch_size,
        shuffle=True,
        generator=torch.Generator().manual_seed(seed),
    )

    history: List[Dict[str, Any]] = []
    best_loss = float('inf')
    best_state = copy.deepcopy(model.state_dict())
    stale = 0

    for epoch in range(config.epochs):
        model.train()
        running = 0.0
        for images, targets in batches:
            optimizer.zero_grad()
            loss = F.binary_cross_entropy_with_logits(model.logit(images), targets)
            loss.backward()
            optimizer.step()
            running += float(loss) * images.shape[0]

        train_loss = running / len(train)
        val_loss = _validation_loss(model, val, val_labels, config.batch_size) if len(val) else train_loss
        val_auc = _safe_auc(predict_scores(model, val.images), val_labels.numpy()) if len(val) else None
        history.append({'epoch': epoch, 'train_loss': train_loss, 'val_loss': val_loss, 'val_auc': val_auc})
        auc_text = f"{val_auc:.4f}" if val_auc is not None else "n/a"
        logger.info(f"Epoch {epoch}: train_loss={train_loss:.4f} val_loss={val_loss:.4f} val_auc={auc_text}")

        if val_loss < best_loss:
            best_loss = val_loss
            best_state = copy.deepcopy(model.state_dict())
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                logger.info(f"Early stopping after epoch {epoch} (best val_loss={best_loss:.4f})")
                break

    model.load_state_dict(best_state)
    model.eval()

    if len(val) and len(torch.unique(val_labels)) == 2:
        model.threshold = youden_threshold(predict_scores(model, val.images), val_labels.numpy())
    else:
        logger.warning("Validation split lacks one class; keeping threshold 0.5")
        model.threshold = 0.5
    logger.info(f"Classifier threshold (Youden's J on validation): {model.threshold:.4f}")

    model.training_history = history
    return model


def save_classifier(model: ScorerModel, directory: Path, config_hash: str, dataset_fingerprint: str) -> Path:
    return save_archive(directory, model.state_dict(), model.descriptor(), metadata={
        'stage': STAGE,
        'threshold': float(model.threshold),
        'config_hash': config_hash,
        'dataset_fingerprint': dataset_fingerprint,
        'history': getattr(model, 'training_history', []),
    })


def load_classifier(directory: Path) -> Tuple[ScorerModel, Dict[str, Any]]:
    """Rebuild a frozen scorer from its archive."""
    state, manifest = load_archive(directory, STAGE)
    model = ScorerModel.from_descriptor(manifest['architecture'], threshold=manifest['threshold'])
    model.load_state_dict(state)
    return model.freeze(), manifest
