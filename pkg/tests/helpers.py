"""Tiny models and in-memory splits shared by the engine tests."""

import sys
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import torch

sys.path.append(str(Path(__file__).parent.parent))

from src.etl.loader import SplitTensors
from src.nets.attributor import AttributorConfig, AttributorModel
from src.nets.inpainter import InpainterModel
from src.nets.scorer import ScorerModel

TINY_SIZE = (16, 16)


def tiny_scorer(dtype=torch.float64, activation='elu', seed=0) -> ScorerModel:
    torch.manual_seed(seed)
    model = ScorerModel(input_size=TINY_SIZE, widths=(4, 4, 4, 4), activation=activation)
    return model.to(dtype).freeze()


def tiny_inpainter(dtype=torch.float64, seed=0) -> InpainterModel:
    torch.manual_seed(seed)
    model = InpainterModel(input_size=TINY_SIZE, depths=(4, 4, 4), kernel_sizes=(3, 3, 3))
    return model.to(dtype).freeze()


def tiny_attributor(scorer: ScorerModel = None, seed=0) -> AttributorModel:
    scorer = scorer or tiny_scorer()
    model = AttributorModel(scorer, AttributorConfig())
    model.reinitialize(torch.Generator().manual_seed(seed))
    return model.to(scorer.head.weight.dtype).eval()


def lesion_split(n_per_class=6, size=TINY_SIZE, seed=0, dtype=torch.float32) -> SplitTensors:
    """Dark noisy images; pathological ones carry a bright 4x4 square."""
    rng = np.random.default_rng(seed)
    h, w = size
    images, labels, gts = [], [], []
    for label in (0, 1):
        for _ in range(n_per_class):
            img = 0.2 + 0.02 * rng.normal(size=size)
            gt = np.zeros(size, dtype=bool)
            if label:
                r, c = rng.integers(2, h - 6), rng.integers(2, w - 6)
                gt[r:r + 4, c:c + 4] = True
                img[gt] += 0.6
            images.append(np.clip(img, 0, 1))
            labels.append(label)
            gts.append(gt)
    n = len(labels)
    return SplitTensors(
        images=torch.as_tensor(np.stack(images)[:, None], dtype=dtype),
        labels=torch.as_tensor(labels, dtype=torch.int64),
        gt_masks=torch.as_tensor(np.stack(gts)[:, None], dtype=dtype),
        organ_masks=torch.ones(n, 1, h, w, dtype=dtype),
        sample_ids=[f"s{i:03d}" for i in range(n)],
    )


class FakeLoader:
    """Stands in for DatasetLoader: fixed splits held in memory."""

    def __init__(self, train: SplitTensors, val: SplitTensors = None, test: SplitTensors = None):
        self.splits = {'train': train, 'val': val if val is not None else train, 'test': test or train}

    def load_split(self, split, limit=None):
        return self.splits[split]


def fake_manifest(size=TINY_SIZE):
    return SimpleNamespace(config=SimpleNamespace(image_size=size), fingerprint='fake')
