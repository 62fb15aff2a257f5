"""Tests for single-pass attribution, result files and the throughput benchmark."""

import pytest
import sys
from pathlib import Path

import numpy as np
import torch

sys.path.append(str(Path(__file__).parent.parent))

from src.engines.attribution import BELOW_THRESHOLD_NOTE, attribute, attribute_batch, attribute_many, save_result
from src.engines.benchmark import MIN_REPETITIONS, measure_throughput, run_benchmark
from src.utils.errors import ConfigurationError, ContractError
from src.utils.imaging import load_gray16, load_mask8
from src.utils.records import read_record
from tests.helpers import tiny_attributor, tiny_inpainter, tiny_scorer


class TestAttribute:
    """Test attribution results."""

    def setup_method(self):
        """Set up test fixtures."""
        self.scorer = tiny_scorer()
        self.model = tiny_attributor(self.scorer)
        self.inpainter = tiny_inpainter()
        torch.manual_seed(0)
        self.images = torch.rand(3, 1, 16, 16, dtype=torch.float64)

    def test_single_encoder_pass(self):
        """Test one forward pass serves the whole batch."""
        results = attribute_batch(self.model, self.inpainter, self.images, ['a', 'b', 'c'])
        assert [r.encoder_passes for r in results] == [1, 1, 1]
        assert [r.sample_id for r in results] == ['a', 'b', 'c']
        print("✓ One encoder pass per batch")

    def test_binary_mask_consistency(self):
        """Test the binary map is the thresholded soft map and area counts it."""
        result = attribute(self.model, self.inpainter, self.images[0, 0])
        t = self.model.config.threshold
        assert np.array_equal(result.binary_mask, result.soft_mask >= t)
        assert result.area == int(result.binary_mask.sum())
        assert result.soft_mask.shape == (16, 16)
        print(f"✓ Binary mask consistent (area {result.area})")

    def test_scores_match_scorer(self):
        """Test the original score equals a direct scorer call."""
        result = attribute(self.model, self.inpainter, self.images[:1])
        with torch.no_grad():
            direct = float(self.scorer(self.images[:1])[0])
        assert result.score_original == pytest.approx(direct, abs=1e-12)
        print("✓ Original score")

    def test_empty_mask_keeps_score(self):
        """Test a closed attributor (all-zero map) leaves the score unchanged."""
        with torch.no_grad():
            self.model.head.weight.zero_()
            self.model.head.bias.copy_(torch.tensor([0.0, 5.0], dtype=torch.float64))
        result = attribute(self.model, self.inpainter, self.images[:1])
        assert result.area == 0
        assert result.score_marginalized == result.score_original
        print("✓ Empty mask, unchanged score")

    def test_below_threshold_flag(self):
        """Test images scoring under theta are flagged in the sidecar."""
        self.scorer.threshold = 0.999
        result = attribute(self.model, self.inpainter, self.images[:1], sample_id='x')
        assert result.below_threshold
        assert result.sidecar()['note'] == BELOW_THRESHOLD_NOTE
        print("✓ Below-threshold flag")

    def test_constraint_flags(self):
        """Test the satisfaction flags follow theta and the area budget."""
        self.model.area_budget = 0
        result = attribute(self.model, self.inpainter, self.images[:1])
        assert result.area_satisfied == (result.area == 0)
        assert result.constraint_satisfied == (result.score_satisfied and result.area_satisfied)
        print("✓ Constraint flags")

    def test_attribute_many_batches(self):
        """Test chunked attribution returns one result per image in order."""
        results = attribute_many(self.model, self.inpainter, self.images, ['a', 'b', 'c'], batch_size=2)
        assert [r.sample_id for r in results] == ['a', 'b', 'c']
        print("✓ Chunked attribution")

    def test_stack_rejected_by_attribute(self):
        """Test attribute takes exactly one image."""
        with pytest.raises(ContractError):
            attribute(self.model, self.inpainter, self.images)
        print("✓ Stack rejected")

    def test_save_result(self, tmp_path):
        """Test the four result files and their contents."""
        result = attribute(self.model, self.inpainter, self.images[:1], sample_id='s1')
        save_result(result, tmp_path, self.images[0, 0].numpy())
        soft = load_gray16(tmp_path / 's1_soft.png')
        assert np.allclose(soft, result.soft_mask, atol=1 / 65535)
        assert np.array_equal(load_mask8(tmp_path / 's1_mask.png'), result.binary_mask)
        assert (tmp_path / 's1_overlay.png').exists()
        sidecar = read_record(tmp_path / 's1.yaml')
        assert sidecar['sample_id'] == 's1' and sidecar['encoder_passes'] == 1
        print("✓ Result files written")


class TestBenchmark:
    """Test throughput measurement."""

    def setup_method(self):
        """Set up test fixtures."""
        self.model = tiny_attributor()
        self.images = torch.rand(2, 1, 16, 16, dtype=torch.float64)

    def test_too_few_repetitions(self):
        """Test fewer than the minimum repetitions is a configuration error."""
        with pytest.raises(ConfigurationError):
            measure_throughput('ours', lambda b: b, self.images, repetitions=MIN_REPETITIONS - 1)
        print("✓ Repetition floor enforced")

    def test_measurement_counts_maps(self):
        """Test maps/second is maps emitted over total time."""
        m = measure_throughput('identity', lambda b: b * 2, self.images, repetitions=10)
        assert m.n_images == 2 and m.repetitions == 10
        assert m.maps_per_second == pytest.approx(20 / m.total_seconds)
        print(f"✓ {m.maps_per_second:.0f} maps/s")

    def test_three_methods(self):
        """Test all three producers are timed."""
        results = run_benchmark(self.model, self.images, repetitions=10)
        assert set(results) == {'ours', 'saliency', 'cam'}
        assert all(r.maps_per_second > 0 for r in results.values())
        print("✓ Benchmark covers ours, saliency and CAM")


if __name__ == '__main__':
    pytest.main([__file__, '-v', '-s'])
