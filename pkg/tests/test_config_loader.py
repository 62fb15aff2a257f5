"""Tests for the layered configuration."""

import pytest
import sys
from pathlib import Path

import yaml

sys.path.append(str(Path(__file__).parent.parent))

from src.utils.config_loader import OUTPUT_ROOT_ENV, Config
from src.utils.errors import ConfigurationError


class TestConfig:
    """Test defaults, user files and overrides."""

    def setup_method(self):
        """Set up test fixtures."""
        self.config = Config()

    def test_defaults_loaded(self):
        """Test the packaged defaults are readable through dotted keys."""
        assert self.config.get('attributor.threshold') == 0.55
        assert self.config['eval.percentiles'] == [50, 75, 90]
        assert self.config.get('missing.key', 'fallback') == 'fallback'
        assert self.config.seed == 1234
        print("✓ Defaults loaded")

    def test_user_file_merges_on_defaults(self, tmp_path):
        """Test a user file overrides only the keys it sets."""
        path = tmp_path / 'user.yaml'
        path.write_text(yaml.safe_dump({'classifier': {'epochs': 3}, 'runtime': {'seed': 9}}))
        cfg = Config(str(path))
        assert cfg.get('classifier.epochs') == 3
        assert cfg.get('classifier.batch_size') == 32
        assert cfg.seed == 9
        print("✓ User file merged")

    def test_unknown_key_in_user_file(self, tmp_path):
        """Test keys the defaults do not define are rejected."""
        path = tmp_path / 'user.yaml'
        path.write_text(yaml.safe_dump({'classifier': {'dropout': 0.5}}))
        with pytest.raises(ConfigurationError):
            Config(str(path))
        print("✓ Unknown key rejected")

    def test_missing_file(self, tmp_path):
        """Test a missing config file is a configuration error."""
        with pytest.raises(ConfigurationError):
            Config(str(tmp_path / 'absent.yaml'))
        print("✓ Missing file rejected")

    def test_overrides(self):
        """Test key=value overrides parse YAML scalars and lists."""
        cfg = self.config.with_overrides(['attributor.epochs=5', 'eval.percentiles=[80, 95]',
                                          'attributor.area_budget=120.5'])
        assert cfg.get('attributor.epochs') == 5
        assert cfg.get('eval.percentiles') == [80, 95]
        assert cfg.get('attributor.area_budget') == 120.5
        assert self.config.get('attributor.epochs') == 300, "Overrides must not touch the original"
        print("✓ Overrides applied to a copy")

    @pytest.mark.parametrize("override", ['attributor.nope=1', 'attributor', 'data=3'])
    def test_bad_overrides(self, override):
        """Test malformed or unknown overrides are rejected."""
        with pytest.raises(ConfigurationError):
            self.config.with_overrides([override])
        print(f"✓ Rejected override {override}")

    def test_fingerprint_tracks_content(self):
        """Test section fingerprints change only with their section."""
        changed = self.config.with_overrides(['classifier.epochs=1'])
        assert changed.fingerprint(['data']) == self.config.fingerprint(['data'])
        assert changed.fingerprint(['classifier']) != self.config.fingerprint(['classifier'])
        print("✓ Fingerprints")

    def test_snapshot_round_trip(self, tmp_path):
        """Test the snapshot reloads as the same resolved tree."""
        path = self.config.with_overrides(['runtime.seed=5']).snapshot(tmp_path / 'snap.yaml')
        reloaded = Config(str(path))
        assert reloaded.to_dict() == self.config.with_overrides(['runtime.seed=5']).to_dict()
        print("✓ Snapshot round trip")

    def test_output_root_precedence(self, monkeypatch):
        """Test CLI flag beats environment, which beats the config value."""
        monkeypatch.delenv(OUTPUT_ROOT_ENV, raising=False)
        assert self.config.output_root() == Path('runs/default')
        monkeypatch.setenv(OUTPUT_ROOT_ENV, '/tmp/from_env')
        assert self.config.output_root() == Path('/tmp/from_env')
        assert self.config.output_root('/tmp/from_cli') == Path('/tmp/from_cli')
        print("✓ Output root precedence")

    def test_section_copy(self):
        """Test sections are returned as independent copies."""
        section = self.config.section('eval')
        section['alpha'] = 0.5
        assert self.config.get('eval.alpha') == 0.05
        with pytest.raises(ConfigurationError):
            self.config.section('plots')
        print("✓ Section copies")


if __name__ == '__main__':
    pytest.main([__file__, '-v', '-s'])
