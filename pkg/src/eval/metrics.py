"""
Localization and ranking metrics for attribution maps.

Masks are 2-D boolean (or 0/1) numpy grids; boxes use inclusive pixel
coordinates. Connectivity is 8-neighborhood throughout.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.spatial.distance import directed_hausdorff
from sklearn.metrics import roc_auc_score, roc_curve

from src.utils.errors import ContractError

logger = logging.getLogger(__name__)

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class BoundingBox:
    """Inclusive pixel box."""

    row_min: int
    col_min: int
    row_max: int
    col_max: int

    def __post_init__(self):
        if self.row_min > self.row_max or self.col_min > self.col_max:
            raise ContractError(f"Degenerate bounding box: {self}")

    @property
    def area(self) -> int:
        return (self.row_max - self.row_min + 1) * (self.col_max - self.col_min + 1)

    def intersection(self, other: "BoundingBox") -> int:
        rows = min(self.row_max, other.row_max) - max(self.row_min, other.row_min) + 1
        cols = min(self.col_max, other.col_max) - max(self.col_min, other.col_min) + 1
        return max(rows, 0) * max(cols, 0)

    def iou(self, other: "BoundingBox") -> float:
        inter = self.intersection(other)
        return inter / float(self.area + other.area - inter)

    def as_tuple(self) -> Tuple[int, int, int, int]:
        return (self.row_min, self.col_min, self.row_max, self.col_max)


def percentile_threshold(saliency_map: np.ndarray, p: float) -> np.ndarray:
    """Foreground = values strictly above the p-th percentile (linear interpolation).

    A constant map yields an empty mask.
    """
    if not 0.0 < p < 100.0:
        raise ContractError(f"Percentile must lie in (0,100), got {p}")
    values = np.asarray(saliency_map, dtype=np.float64)
    return values > np.percentile(values, p)


def connected_component_boxes(mask: np.ndarray) -> List[BoundingBox]:
    """One box per 8-connected component, ordered by each component's first pixel in raster order."""
    labels, count = ndimage.label(np.asarray(mask, dtype=bool), structure=EIGHT_CONNECTED)
    boxes = []
    for rows, cols in ndimage.find_objects(labels)[:count]:
        boxes.append(BoundingBox(rows.start, cols.start, rows.stop - 1, cols.stop - 1))
    return boxes


def hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric Hausdorff distance (Euclidean) between foreground point sets.

    Empty vs empty is 0; empty vs nonempty is the image diagonal.
    """
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ContractError(f"Mask shapes differ: {a.shape} vs {b.shape}")
    pa, pb = np.argwhere(a), np.argwhere(b)
    if len(pa) == 0 and len(pb) == 0:
        return 0.0
    if len(pa) == 0 or len(pb) == 0:
        return float(math.hypot(*a.shape))
    return float(max(directed_hausdorff(pa, pb)[0], directed_hausdorff(pb, pa)[0]))


def weak_localization(gt_boxes: Sequence[BoundingBox], pred_boxes: Sequence[BoundingBox],
                      tau: float = 0.125, literal: bool = False,
                      reduction: str = 'mean') -> Optional[float]:
    """Share of ground-truth boxes found by some predicted box.

    A box is found when its best IOU with a prediction is >= tau (or, with
    ``literal``, when some prediction has IOU <= tau). ``reduction='median'``
    gives the robust per-image value. Returns None when there is no ground truth.
    """
    if not 0.0 < tau < 1.0:
        raise ContractError(f"IOU threshold must lie in (0,1), got {tau}")
    if not gt_boxes:
        return None
    found = []
    for gt in gt_boxes:
        ious = [gt.iou(pred) for pred in pred_boxes]
        if literal:
            found.append(float(any(iou <= tau for iou in ious)))
        else:
            found.append(float(bool(ious) and max(ious) >= tau))
    if reduction == 'median':
        return float(np.median(found))
    if reduction != 'mean':
        raise ContractError(f"Unknown reduction '{reduction}'")
    return float(np.mean(found))


def area_ratio(mask: np.ndarray, reference: Optional[np.ndarray] = None) -> float:
    """|mask & reference| / |reference|; the reference defaults to the whole image."""
    mask = np.asarray(mask, dtype=bool)
    reference = np.ones_like(mask) if reference is None else np.asarray(reference, dtype=bool)
    total = int(reference.sum())
    if total == 0:
        raise ContractError("Reference region for area ratio is empty")
    return float((mask & reference).sum()) / total


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Pixel IOU of two masks (0 when both are empty)."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    union = int((a | b).sum())
    return float((a & b).sum()) / union if union else 0.0


def _check_labels(labels: np.ndarray) -> None:
    if len(np.unique(labels)) != 2:
        raise ContractError("ROC needs both classes among the labels")


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Area under the ROC curve; ties count one half."""
    labels = np.asarray(labels)
    _check_labels(labels)
    return float(roc_auc_score(labels, np.asarray(scores, dtype=np.float64)))


def roc_points(scores: Sequence[float], labels: Sequence[int]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fpr, tpr, thresholds) of the exhaustive threshold sweep."""
    labels = np.asarray(labels)
    _check_labels(labels)
    return roc_curve(labels, np.asarray(scores, dtype=np.float64), drop_intermediate=False)


def youden_threshold(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Threshold maximizing Youden's J = TPR - FPR, clipped into (0,1)."""
    fpr, tpr, thresholds = roc_points(scores, labels)
    best = int(np.argmax(tpr - fpr))
    return float(np.clip(thresholds[best], 1e-6, 1 - 1e-6))
