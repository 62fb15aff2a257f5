"""Tests for the classifier and attributor training engines on tiny in-memory splits."""

import pytest
import sys
from pathlib import Path

import numpy as np
import torch

sys.path.append(str(Path(__file__).parent.parent))

from src.engines.attribution_loss import ConstraintConfig
from src.engines.attributor_trainer import (
    AttributorTrainConfig, load_attributor, resolve_area_budget, save_attributor, train_attributor,
)
from src.engines.classifier_trainer import (
    ClassifierTrainConfig, load_classifier, predict_scores, save_classifier, train_classifier,
)
from src.eval.metrics import roc_auc
from src.nets.attributor import AttributorConfig
from src.utils.archive import module_hash
from src.utils.errors import ConfigurationError, DependencyError
from tests.helpers import FakeLoader, fake_manifest, lesion_split, tiny_inpainter, tiny_scorer


class TestClassifierTrainer:
    """Test scorer training."""

    def setup_method(self):
        """Set up test fixtures."""
        self.split = lesion_split(n_per_class=16)
        self.test = lesion_split(n_per_class=200, seed=5)
        self.config = ClassifierTrainConfig(widths=(8, 8, 8, 8), batch_size=8, epochs=40, learning_rate=1e-2,
                                            patience=40)

    def test_learns_separable_data(self):
        """Test bright squares are told apart from plain images."""
        model = train_classifier(fake_manifest(), self.config, seed=0, loader=FakeLoader(self.split))
        auc = roc_auc(predict_scores(model, self.split.images), self.split.labels.numpy())
        assert auc >= 0.8, f"Expected AUC >= 0.8, got {auc:.3f}"
        assert 0.0 < model.threshold < 1.0
        assert len(model.training_history) >= 1
        print(f"✓ Separable data learned (AUC {auc:.3f}, theta {model.threshold:.3f})")

    def test_single_class_rejected(self):
        """Test a training split with one class is a configuration error."""
        with pytest.raises(ConfigurationError):
            train_classifier(fake_manifest(), self.config, loader=FakeLoader(self.split.healthy()))
        print("✓ Single-class training rejected")

    def test_zero_epochs_and_archive(self, tmp_path):
        """Test an untrained model still gets a threshold and round-trips through its archive."""
        config = ClassifierTrainConfig(widths=(4, 4, 4, 4), epochs=0)
        model = train_classifier(fake_manifest(), config, loader=FakeLoader(self.split))
        assert model.training_history == []
        save_classifier(model, tmp_path / 'classifier', 'cfg', 'data')
        loaded, manifest = load_classifier(tmp_path / 'classifier')
        assert loaded.threshold == pytest.approx(model.threshold)
        assert manifest['dataset_fingerprint'] == 'data'
        assert not any(p.requires_grad for p in loaded.parameters())
        assert np.allclose(predict_scores(loaded, self.split.images), predict_scores(model, self.split.images))
        print("✓ Zero-epoch model archived")

    def test_untrained_model_at_chance(self):
        """Test zero epochs leave every score at 0.5, so test AUC is 0.5."""
        model = train_classifier(fake_manifest(), ClassifierTrainConfig(widths=(4, 4, 4, 4), epochs=0),
                                 loader=FakeLoader(self.split))
        scores = predict_scores(model, self.test.images)
        assert np.allclose(scores, 0.5)
        auc = roc_auc(scores, self.test.labels.numpy())
        assert auc == pytest.approx(0.5, abs=0.1)
        print(f"✓ Untrained AUC {auc:.3f}")

    def test_shuffled_labels_control(self):
        """Test training and scoring against permuted labels stays at chance on held-out data."""
        config = ClassifierTrainConfig(widths=(8, 8, 8, 8), batch_size=8, epochs=10, learning_rate=1e-2,
                                       patience=10, shuffle_labels=True)
        model = train_classifier(fake_manifest(), config, seed=0, loader=FakeLoader(self.split))
        permuted = self.test.shuffled_labels(3)
        assert sorted(permuted.tolist()) == sorted(self.test.labels.tolist())
        auc = roc_auc(predict_scores(model, self.test.images), permuted.numpy())
        assert auc <= 0.6, f"Control AUC {auc:.3f} above chance"
        print(f"✓ Shuffled-label control AUC {auc:.3f}")

    def test_unknown_section_key(self):
        """Test unknown classifier keys are rejected."""
        with pytest.raises(ConfigurationError):
            ClassifierTrainConfig.from_section({'dropout': 0.1})
        print("✓ Unknown key rejected")


class TestAttributorTrainer:
    """Test attributor training around frozen networks."""

    def setup_method(self):
        """Set up test fixtures."""
        self.split = lesion_split(n_per_class=6)
        self.scorer = tiny_scorer(dtype=torch.float32)
        self.inpainter = tiny_inpainter(dtype=torch.float32)
        self.constraints = ConstraintConfig(theta=0.5, delta=32.0)
        self.train_cfg = AttributorTrainConfig(batch_size=4, epochs=2, base_learning_rate=1e-4,
                                               max_learning_rate=1e-3, cycle_steps=2, patience=5)

    def test_training_keeps_frozen_networks(self, tmp_path):
        """Test a short run records its history and leaves scorer and inpainter untouched."""
        scorer_hash = module_hash(self.scorer)
        inpainter_hash = module_hash(self.inpainter)
        model = train_attributor(fake_manifest(), self.scorer, self.inpainter, AttributorConfig(),
                                 self.constraints, self.train_cfg, seed=0, loader=FakeLoader(self.split))
        assert module_hash(self.scorer) == scorer_hash
        assert module_hash(self.inpainter) == inpainter_hash
        assert len(model.training_history) == 2
        assert len(model.step_losses) == 4, "Two epochs of two batches"
        assert all(np.isfinite(model.step_losses))
        assert model.area_budget == 32.0

        save_attributor(model, tmp_path / 'attributor', self.constraints, 'cfg', 'data', scorer_hash, inpainter_hash)
        loaded, manifest = load_attributor(tmp_path / 'attributor', self.scorer)
        assert manifest['area_budget'] == 32.0
        x = self.split.images[:2]
        assert torch.equal(loaded(x), model(x))
        print("✓ Attributor trained with frozen dependencies")

    def test_archive_bound_to_classifier(self, tmp_path):
        """Test loading against a different classifier is a dependency error."""
        model = train_attributor(fake_manifest(), self.scorer, self.inpainter, AttributorConfig(),
                                 self.constraints, AttributorTrainConfig(epochs=0), loader=FakeLoader(self.split))
        save_attributor(model, tmp_path / 'attributor', self.constraints, 'cfg', 'data',
                        module_hash(self.scorer), module_hash(self.inpainter))
        with pytest.raises(DependencyError):
            load_attributor(tmp_path / 'attributor', tiny_scorer(dtype=torch.float32, seed=1))
        print("✓ Classifier mismatch detected")

    def test_missing_dependencies(self):
        """Test training without scorer or inpainter is refused."""
        with pytest.raises(ConfigurationError):
            train_attributor(fake_manifest(), self.scorer, None, AttributorConfig(), self.constraints,
                             self.train_cfg, loader=FakeLoader(self.split))
        print("✓ Missing inpainter rejected")

    def test_cyclic_learning_rate_bounds(self):
        """Test the triangular schedule stays within its bounds and reaches both."""
        config = AttributorTrainConfig(batch_size=4, epochs=6, base_learning_rate=1e-4, max_learning_rate=1e-3,
                                       cycle_steps=2, patience=10)
        model = train_attributor(fake_manifest(), self.scorer, self.inpainter, AttributorConfig(),
                                 self.constraints, config, seed=0, loader=FakeLoader(self.split))
        rates = [h['learning_rate'] for h in model.training_history]
        assert len(rates) == 6
        assert all(1e-4 - 1e-12 <= r <= 1e-3 + 1e-12 for r in rates), f"Out of bounds: {rates}"
        assert max(rates) == pytest.approx(1e-3) and min(rates) == pytest.approx(1e-4)
        print(f"✓ Learning rates {rates}")

    def test_training_summaries(self):
        """Test the step-loss trend flag and best validation satisfaction are recorded."""
        model = train_attributor(fake_manifest(), self.scorer, self.inpainter, AttributorConfig(),
                                 self.constraints, self.train_cfg, seed=0, loader=FakeLoader(self.split))
        assert isinstance(model.step_loss_decreasing, bool)
        best = max(h['val_satisfaction'] for h in model.training_history)
        assert model.best_val_satisfaction == pytest.approx(best)
        print("✓ Training summaries recorded")

    def test_area_budget_resolution(self):
        """Test delta defaults to twice the mean lesion area."""
        assert resolve_area_budget({'area_budget': None}, self.split) == pytest.approx(32.0)
        assert resolve_area_budget({'area_budget': 50}, self.split) == 50.0
        with pytest.raises(ConfigurationError):
            resolve_area_budget({}, self.split.healthy())
        print("✓ Area budget resolution")


if __name__ == '__main__':
    pytest.main([__file__, '-v', '-s'])
