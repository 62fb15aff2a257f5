"""Unit tests for localization and ranking metrics, checked against brute-force oracles."""

import pytest
import sys
from collections import deque
from pathlib import Path

import numpy as np

sys.path.append(str(Path(__file__).parent.parent))

from src.eval.metrics import (
    BoundingBox, area_ratio, connected_component_boxes, hausdorff, mask_iou, percentile_threshold, roc_auc,
    roc_points, weak_localization, youden_threshold,
)
from src.utils.errors import ContractError


def flood_fill_boxes(mask):
    """BFS over 8-neighbors, components started in raster order."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    boxes = []
    for r in range(h):
        for c in range(w):
            if not mask[r, c] or seen[r, c]:
                continue
            queue = deque([(r, c)])
            seen[r, c] = True
            rows, cols = [r], [c]
            while queue:
                y, x = queue.popleft()
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        ny, nx = y + dy, x + dx
                        if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            queue.append((ny, nx))
                            rows.append(ny)
                            cols.append(nx)
            boxes.append((min(rows), min(cols), max(rows), max(cols)))
    return boxes


def brute_force_hausdorff(a, b):
    pa, pb = np.argwhere(a), np.argwhere(b)
    d = np.sqrt(((pa[:, None, :] - pb[None, :, :]) ** 2).sum(-1))
    return max(d.min(axis=1).max(), d.min(axis=0).max())


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


class TestThresholding:
    """Test percentile thresholding and component boxes."""

    def test_percentile_on_ramp(self):
        """Test values 1..100 at the 90th percentile keep the top ten."""
        ramp = np.arange(1, 101, dtype=float).reshape(10, 10)
        mask = percentile_threshold(ramp, 90)
        assert mask.sum() == 10, f"Expected 10 pixels, got {mask.sum()}"
        assert ramp[mask].min() == 91
        print("✓ Ramp percentile keeps 91..100")

    def test_constant_map_is_empty(self):
        """Test a constant map has no foreground at any percentile."""
        assert not percentile_threshold(np.full((6, 6), 0.3), 50).any()
        print("✓ Constant map, empty mask")

    def test_percentile_bounds(self):
        """Test percentiles outside (0,100) are rejected."""
        with pytest.raises(ContractError):
            percentile_threshold(np.zeros((3, 3)), 100)
        print("✓ Percentile bounds enforced")

    def test_components_match_flood_fill(self):
        """Test component boxes against an 8-connected flood fill on 1000 random masks."""
        rng = np.random.default_rng(0)
        for _ in range(1000):
            mask = rng.random((8, 8)) > 0.6
            got = sorted(b.as_tuple() for b in connected_component_boxes(mask))
            assert got == sorted(flood_fill_boxes(mask))
        print("✓ 1000 masks match the flood-fill oracle")

    def test_diagonal_pixels_connect(self):
        """Test diagonal neighbors form one component."""
        mask = np.eye(4, dtype=bool)
        boxes = connected_component_boxes(mask)
        assert [b.as_tuple() for b in boxes] == [(0, 0, 3, 3)]
        print("✓ 8-connectivity")

    def test_raster_order(self):
        """Test components are listed by their first pixel in raster order."""
        mask = np.zeros((6, 6), dtype=bool)
        mask[4:6, 0:2] = True
        mask[0:2, 3:5] = True
        boxes = [b.as_tuple() for b in connected_component_boxes(mask)]
        assert boxes == [(0, 3, 1, 4), (4, 0, 5, 1)]
        print("✓ Raster ordering")


class TestHausdorff:
    """Test the symmetric Hausdorff distance."""

    def test_hand_case(self):
        """Test single points (0,0) and (3,4) are 5 apart."""
        a = np.zeros((5, 5), dtype=bool)
        b = np.zeros((5, 5), dtype=bool)
        a[0, 0] = True
        b[3, 4] = True
        assert hausdorff(a, b) == pytest.approx(5.0)
        print("✓ Hausdorff 3-4-5")

    def test_matches_all_pairs_oracle(self):
        """Test 1000 random mask pairs against the all-pairs computation."""
        rng = np.random.default_rng(1)
        checked = 0
        for _ in range(1000):
            a = rng.random((8, 8)) > 0.8
            b = rng.random((8, 8)) > 0.8
            if not a.any() or not b.any():
                continue
            assert hausdorff(a, b) == pytest.approx(brute_force_hausdorff(a, b))
            checked += 1
        print(f"✓ {checked} pairs match the oracle")

    def test_empty_conventions(self):
        """Test empty-vs-empty is 0 and empty-vs-nonempty is the diagonal."""
        empty = np.zeros((3, 4), dtype=bool)
        full = np.ones((3, 4), dtype=bool)
        assert hausdorff(empty, empty) == 0.0
        assert hausdorff(empty, full) == pytest.approx(5.0)
        print("✓ Empty-mask conventions")


class TestWeakLocalization:
    """Test box matching."""

    def setup_method(self):
        """Set up test fixtures."""
        self.gt = BoundingBox(0, 0, 3, 3)
        self.partial = BoundingBox(2, 2, 5, 5)  # 2x2 overlap: IOU 4/28
        self.far = BoundingBox(10, 10, 12, 12)

    def test_identical_and_disjoint(self):
        """Test identical boxes score 1 and disjoint ones 0."""
        assert weak_localization([self.gt], [self.gt]) == 1.0
        assert weak_localization([self.gt], [self.far]) == 0.0
        assert weak_localization([self.gt], []) == 0.0
        print("✓ Identical 1, disjoint 0")

    def test_partial_overlap_threshold(self):
        """Test IOU 4/28 is found at tau 0.125 but not at 0.2."""
        assert self.gt.iou(self.partial) == pytest.approx(4 / 28)
        assert weak_localization([self.gt], [self.partial], tau=0.125) == 1.0
        assert weak_localization([self.gt], [self.partial], tau=0.2) == 0.0
        print("✓ IOU 4/28 found at 0.125")

    def test_monotone_in_tau(self):
        """Test raising tau never finds more boxes."""
        rng = np.random.default_rng(2)
        for _ in range(200):
            mask_a = rng.random((8, 8)) > 0.7
            mask_b = rng.random((8, 8)) > 0.7
            gt, pred = connected_component_boxes(mask_a), connected_component_boxes(mask_b)
            if not gt:
                continue
            values = [weak_localization(gt, pred, tau=t) for t in (0.1, 0.3, 0.5, 0.9)]
            assert all(a >= b for a, b in zip(values, values[1:]))
        print("✓ Monotone in tau")

    def test_literal_reading(self):
        """Test the literal flag counts predictions with IOU at most tau."""
        assert weak_localization([self.gt], [self.partial], literal=True) == 0.0
        assert weak_localization([self.gt], [self.far], literal=True) == 1.0
        print("✓ Literal reading")

    def test_median_reduction(self):
        """Test the per-image median of found flags."""
        other = BoundingBox(20, 20, 21, 21)
        value = weak_localization([self.gt, other, self.far], [self.gt, self.far], reduction='median')
        assert value == 1.0
        print("✓ Median reduction")

    def test_no_ground_truth(self):
        """Test images without lesions are undefined."""
        assert weak_localization([], [self.gt]) is None
        print("✓ No ground truth gives None")

    def test_degenerate_box(self):
        """Test inverted coordinates are rejected."""
        with pytest.raises(ContractError):
            BoundingBox(3, 0, 1, 2)
        print("✓ Degenerate box rejected")


class TestAreaAndOverlap:
    """Test area ratio and pixel IOU."""

    def test_area_ratio(self):
        """Test whole-image and organ-relative area ratios."""
        mask = np.zeros((4, 4), dtype=bool)
        mask[:2, :2] = True
        organ = np.zeros((4, 4), dtype=bool)
        organ[:, :2] = True
        assert area_ratio(mask) == pytest.approx(0.25)
        assert area_ratio(mask, organ) == pytest.approx(0.5)
        with pytest.raises(ContractError):
            area_ratio(mask, np.zeros((4, 4)))
        print("✓ Area ratios")

    def test_mask_iou(self):
        """Test pixel IOU and the empty convention."""
        a = np.array([[1, 1], [0, 0]], dtype=bool)
        b = np.array([[1, 0], [1, 0]], dtype=bool)
        assert mask_iou(a, b) == pytest.approx(1 / 3)
        assert mask_iou(np.zeros((2, 2)), np.zeros((2, 2))) == 0.0
        print("✓ Pixel IOU")


class TestRoc:
    """Test ROC AUC and threshold selection."""

    def test_hand_case(self):
        """Test six samples with 7 of 9 pairs ordered correctly."""
        scores = [0.1, 0.4, 0.35, 0.8, 0.3, 0.2]
        labels = [0, 0, 1, 1, 1, 0]
        assert roc_auc(scores, labels) == pytest.approx(7 / 9)
        print("✓ AUC 7/9")

    def test_matches_pairwise_oracle(self):
        """Test random tied scores against the pairwise definition."""
        rng = np.random.default_rng(3)
        for _ in range(200):
            labels = rng.integers(0, 2, size=12)
            if len(set(labels)) < 2:
                continue
            scores = rng.integers(0, 5, size=12) / 4.0
            assert roc_auc(scores, labels) == pytest.approx(pairwise_auc(scores, labels))
        print("✓ Pairwise oracle")

    def test_invariant_under_monotone_transform(self):
        """Test AUC depends only on score order."""
        rng = np.random.default_rng(4)
        scores = rng.random(30)
        labels = np.r_[np.zeros(15, dtype=int), np.ones(15, dtype=int)]
        assert roc_auc(scores, labels) == pytest.approx(roc_auc(np.exp(3 * scores), labels))
        print("✓ Monotone invariance")

    def test_single_class_rejected(self):
        """Test ROC needs both classes."""
        with pytest.raises(ContractError):
            roc_auc([0.1, 0.2], [1, 1])
        print("✓ Single class rejected")

    def test_curve_endpoints_and_youden(self):
        """Test the sweep spans (0,0) to (1,1) and the Youden threshold separates clean data."""
        scores = [0.1, 0.2, 0.3, 0.7, 0.8, 0.9]
        labels = [0, 0, 0, 1, 1, 1]
        fpr, tpr, _ = roc_points(scores, labels)
        assert (fpr[0], tpr[0]) == (0.0, 0.0) and (fpr[-1], tpr[-1]) == (1.0, 1.0)
        theta = youden_threshold(scores, labels)
        assert 0.3 < theta <= 0.7
        print(f"✓ Youden threshold {theta}")


if __name__ == '__main__':
    pytest.main([__file__, '-v', '-s'])
