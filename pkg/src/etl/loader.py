"""Data loader: manifest splits into torch tensors."""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from torch.utils.data import TensorDataset

from src.etl.dataset import DatasetManifest
from src.etl.synth import HEALTHY, PATHOLOGICAL

logger = logging.getLogger(__name__)


@dataclass
class SplitTensors:
    """One split held in memory: images (N,1,H,W), labels (N,), gt and organ masks (N,1,H,W)."""

    images: torch.Tensor
    labels: torch.Tensor
    gt_masks: torch.Tensor
    organ_masks: torch.Tensor
    sample_ids: list

    def __len__(self) -> int:
        return int(self.images.shape[0])

    def select(self, label: int) -> "SplitTensors":
        keep = self.labels == label
        idx = torch.nonzero(keep).flatten().tolist()
        return SplitTensors(
            images=self.images[keep],
            labels=self.labels[keep],
            gt_masks=self.gt_masks[keep],
            organ_masks=self.organ_masks[keep],
            sample_ids=[self.sample_ids[i] for i in idx],
        )

    def pathological(self) -> "SplitTensors":
        return self.select(PATHOLOGICAL)

    def healthy(self) -> "SplitTensors":
        return self.select(HEALTHY)

    def shuffled_labels(self, seed: int) -> torch.Tensor:
        """A seeded permutation of the labels (label-permutation control)."""
        order = torch.randperm(len(self), generator=torch.Generator().manual_seed(seed))
        return self.labels[order]

    def as_dataset(self, labels: Optional[torch.Tensor] = None) -> TensorDataset:
        """(image, float label) pairs; ``labels`` replaces the stored ones (shuffled-label control)."""
        return TensorDataset(self.images, (self.labels if labels is None else labels).float())


class DatasetLoader:
    """Load dataset splits from a manifest into tensors."""

    def __init__(self, manifest: DatasetManifest, dtype: torch.dtype = torch.float32):
        """Initialize loader for one manifest."""
        self.manifest = manifest
        self.dtype = dtype
        self._cache = {}  # Cache loaded splits

    def load_split(self, split: str, limit: Optional[int] = None) -> SplitTensors:
        """Load every sample of a split (optionally only the first ``limit``)."""
        key = (split, limit)
        if key in self._cache:
            return self._cache[key]

        records = self.manifest.split(split)
        if limit is not None:
            records = records[:limit]

        images, labels, gts, organs = [], [], [], []
        for record in records:
            sample = self.manifest.load(record)
            images.append(sample.pixels)
            labels.append(sample.label)
            gts.append(sample.gt_mask)
            organs.append(sample.organ_mask)

        h, w = self.manifest.config.image_size
        tensors = SplitTensors(
            images=torch.as_tensor(np.array(images).reshape(-1, 1, h, w), dtype=self.dtype),
            labels=torch.as_tensor(np.array(labels, dtype=np.int64)),
            gt_masks=torch.as_tensor(np.array(gts).reshape(-1, 1, h, w), dtype=self.dtype),
            organ_masks=torch.as_tensor(np.array(organs).reshape(-1, 1, h, w), dtype=self.dtype),
            sample_ids=[r.sample_id for r in records],
        )
        logger.info(f"Loaded {len(tensors)} samples from split '{split}'")
        self._cache[key] = tensors
        return tensors
