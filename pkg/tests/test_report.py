"""Tests for the comparison report and acceptance checks."""

import pytest
import sys
from pathlib import Path

import numpy as np
import pandas as pd

sys.path.append(str(Path(__file__).parent.parent))

from src.eval.report import (
    OURS, AcceptanceCheck, EvalConfig, build_comparison_report, compute_image_records, load_report, write_acceptance,
)
from src.utils.errors import ConfigurationError, ContractError, PersistenceError


def square_masks(n=6, size=16):
    rng = np.random.default_rng(0)
    gts = np.zeros((n, size, size), dtype=bool)
    for i in range(n):
        r, c = rng.integers(1, size - 5, size=2)
        gts[i, r:r + 4, c:c + 4] = True
    return gts


class TestImageRecords:
    """Test per-image metric rows."""

    def setup_method(self):
        """Set up test fixtures."""
        self.gts = square_masks()
        self.organs = np.ones_like(self.gts)
        self.ids = [f"p{i}" for i in range(len(self.gts))]

    def test_perfect_maps(self):
        """Test maps equal to the lesion give zero distance and full localization."""
        records = compute_image_records(self.ids, self.gts, {'cam': self.gts.astype(float)}, self.gts,
                                        self.organs, percentiles=(50, 90))
        assert len(records) == len(self.ids) * 2 * 2
        assert (records['hausdorff'] == 0).all()
        assert (records['localization'] == 1).all()
        assert records['area_px'].eq(16).all()
        print("✓ Perfect maps score perfectly")

    def test_ours_is_percentile_independent(self):
        """Test our binary mask is reused at every percentile."""
        ours = np.zeros_like(self.gts)
        records = compute_image_records(self.ids, ours, {}, self.gts, self.organs, percentiles=(50, 75, 90))
        per_p = records.groupby('percentile')['hausdorff'].mean()
        assert per_p.nunique() == 1
        assert np.isclose(per_p.iloc[0], np.hypot(16, 16)), "Empty prediction is the image diagonal"
        print("✓ Our mask reused across percentiles")

    def test_healthy_images_have_no_localization(self):
        """Test images without lesions record NaN localization."""
        gts = np.zeros((2, 8, 8), dtype=bool)
        records = compute_image_records(['h0', 'h1'], gts, {}, gts, np.ones_like(gts), percentiles=(50,))
        assert records['localization'].isna().all()
        print("✓ No lesion, no localization")

    def test_length_mismatch(self):
        """Test inputs with different sample counts are rejected."""
        with pytest.raises(ContractError):
            compute_image_records(self.ids[:2], self.gts, {}, self.gts, self.organs)
        print("✓ Length mismatch rejected")


class TestMetricsReport:
    """Test aggregation, persistence and rendering."""

    def setup_method(self):
        """Set up test fixtures."""
        self.gts = square_masks(n=8)
        rng = np.random.default_rng(1)
        noisy = [np.where(g, 1.0, 0.0) + 0.6 * rng.random(g.shape) for g in self.gts]
        self.report = build_comparison_report(
            [f"p{i}" for i in range(8)], self.gts, {'cam': np.stack(noisy), 'saliency': rng.random(self.gts.shape)},
            self.gts, np.ones_like(self.gts), percentiles=(50, 90),
        )

    def test_table_layout(self):
        """Test one row per (percentile, method) and the expected cells."""
        assert len(self.report.table) == 2 * 3
        assert self.report.methods == [OURS, 'cam', 'saliency']
        assert self.report.cell(50, OURS, 'H_mean') == 0.0
        assert self.report.cell(90, OURS, 'L') == 1.0
        assert self.report.cell(50, 'cam', 'n') == 8
        with pytest.raises(ContractError):
            self.report.cell(75, OURS, 'H_mean')
        print("✓ Table layout")

    def test_wilcoxon_rows(self):
        """Test one test per percentile and baseline, ours strictly better than noise."""
        assert len(self.report.wilcoxon) == 4
        sal = self.report.wilcoxon[(self.report.wilcoxon['baseline'] == 'saliency')
                                   & (self.report.wilcoxon['percentile'] == 50)].iloc[0]
        assert sal['n'] == 8
        assert sal['p_value'] == pytest.approx(2 / 256)
        print(f"✓ Wilcoxon vs saliency p = {sal['p_value']:.4f}")

    def test_rebuild_from_csv(self, tmp_path):
        """Test the saved per-image CSV reproduces every table cell."""
        self.report.save(tmp_path)
        for name in ('per_image.csv', 'report_table.csv', 'wilcoxon.csv', 'report.txt'):
            assert (tmp_path / name).exists(), f"Missing {name}"
        rebuilt = load_report(tmp_path)
        pd.testing.assert_frame_equal(rebuilt.table, self.report.table, check_dtype=False)
        pd.testing.assert_frame_equal(rebuilt.wilcoxon, self.report.wilcoxon, check_dtype=False)
        print("✓ Report rebuilt from per-image records")

    def test_text_rendering(self):
        """Test the text table carries every percentile and method."""
        text = self.report.to_text()
        assert 'P50' in text and 'P90' in text
        assert 'H_ours' in text and 'L_cam' in text and 'A_saliency' in text
        assert 'n = 8 images' in text
        print(text)

    def test_missing_records(self, tmp_path):
        """Test loading a report without its CSV is a persistence error."""
        with pytest.raises(PersistenceError):
            load_report(tmp_path)
        print("✓ Missing records reported")


class TestEvalConfig:
    """Test the eval section."""

    def test_from_section(self):
        """Test lists become tuples and defaults fill the rest."""
        cfg = EvalConfig.from_section({'percentiles': [50, 90], 'roc_runs': 3})
        assert cfg.percentiles == (50, 90)
        assert cfg.roc_runs == 3 and cfg.localization_reduction == 'median'
        print("✓ Eval section parsed")

    @pytest.mark.parametrize('section', [
        {'percentiles': []},
        {'percentiles': [0, 50]},
        {'iou_threshold': 0.0},
        {'iou_threshold': 1.0},
        {'localization_reduction': 'max'},
        {'chance_draws': 0},
        {'alpha': 1.0},
        {'folds': 5},
    ])
    def test_invalid_sections(self, section):
        """Test invalid or unknown eval settings are configuration errors."""
        with pytest.raises(ConfigurationError):
            EvalConfig.from_section(section)
        print(f"✓ Rejected {section}")


class TestAcceptance:
    """Test acceptance check output."""

    def test_write_acceptance(self, tmp_path):
        """Test checks are written as a CSV with pass flags."""
        checks = [AcceptanceCheck('baseline AUC', 0.93, '>= 0.85', True),
                  AcceptanceCheck('sanity check', None, 'pass', False)]
        frame = write_acceptance(checks, tmp_path / 'acceptance.csv')
        assert frame['passed'].tolist() == [True, False]
        assert pd.read_csv(tmp_path / 'acceptance.csv')['criterion'].tolist() == ['baseline AUC', 'sanity check']
        print("✓ Acceptance CSV")


if __name__ == '__main__':
    pytest.main([__file__, '-v', '-s'])
