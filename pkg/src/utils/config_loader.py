"""Configuration loader utility."""

import copy
import hashlib
import json
import os
import yaml
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

from dotenv import load_dotenv

from src.utils.errors import ConfigurationError

PROJECT_ROOT = Path(__file__).parent.parent.parent
DEFAULT_CONFIG_PATH = PROJECT_ROOT / "config" / "config.yaml"
OUTPUT_ROOT_ENV = "ATTRIB_OUTPUT_ROOT"

load_dotenv()


def _read_yaml(path: Path) -> Dict[str, Any]:
    if not path.exists():
        raise ConfigurationError(f"Configuration file not found: {path}")
    with open(path, 'r') as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigurationError(f"Malformed configuration {path}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"Configuration {path} must be a mapping at top level")
    return data


def _merge_checked(base: Dict[str, Any], update: Dict[str, Any], prefix: str = "") -> None:
    """Merge ``update`` into ``base`` in place, rejecting keys ``base`` does not define."""
    for key, value in update.items():
        dotted = f"{prefix}{key}"
        if key not in base:
            raise ConfigurationError(f"Unknown configuration key: {dotted}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigurationError(f"Configuration key {dotted} must be a section")
            _merge_checked(base[key], value, prefix=f"{dotted}.")
        else:
            base[key] = value


class Config:
    """Configuration management class.

    The packaged ``config/config.yaml`` holds the defaults and is also the
    schema: a user file is merged on top of it and may only set keys the
    defaults define.
    """

    def __init__(self, config_path: Optional[str] = None, defaults_path: Path = DEFAULT_CONFIG_PATH):
        """Load defaults and, if given, a user configuration on top."""
        self.defaults_path = Path(defaults_path)
        self.config_path = Path(config_path) if config_path else self.defaults_path
        self._config = self._load_config()

    def _load_config(self) -> Dict[str, Any]:
        """Load and merge YAML configuration."""
        resolved = _read_yaml(self.defaults_path)
        if self.config_path != self.defaults_path:
            _merge_checked(resolved, _read_yaml(self.config_path))
        return resolved

    def with_overrides(self, overrides: Iterable[str]) -> "Config":
        """Return a copy with ``key=value`` overrides applied (YAML scalar parsing)."""
        updated = copy.deepcopy(self)
        for item in overrides:
            if '=' not in item:
                raise ConfigurationError(f"Override must look like key=value, got: {item}")
            key, raw = item.split('=', 1)
            value = yaml.safe_load(raw) if raw.strip() else None
            nested: Dict[str, Any] = value
            for part in reversed(key.strip().split('.')):
                nested = {part: nested}
            _merge_checked(updated._config, nested)
        return updated

    def get(self, key: str, default: Any = None) -> Any:
        """Get configuration value by dot-separated key path."""
        keys = key.split('.')
        value = self._config

        for k in keys:
            if isinstance(value, dict):
                value = value.get(k)
                if value is None:
                    return default
            else:
                return default

        return value

    def __getitem__(self, key: str) -> Any:
        """Allow dictionary-style access."""
        return self.get(key)

    def section(self, name: str) -> Dict[str, Any]:
        """Return a deep copy of one top-level section."""
        if name not in self._config:
            raise ConfigurationError(f"Unknown configuration section: {name}")
        return copy.deepcopy(self._config[name])

    def to_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(self._config)

    def fingerprint(self, sections: Optional[Iterable[str]] = None) -> str:
        """sha256 of the canonical JSON dump of the resolved tree (or some sections)."""
        tree = self._config if sections is None else {s: self._config.get(s) for s in sections}
        canonical = json.dumps(tree, sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()

    def snapshot(self, path: Path) -> Path:
        """Write the resolved configuration next to a run's artifacts."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w') as f:
            yaml.safe_dump(self._config, f, sort_keys=True)
        return path

    @property
    def seed(self) -> int:
        """Get global seed."""
        return int(self.get('runtime.seed', 0))

    def output_root(self, cli_value: Optional[str] = None) -> Path:
        """Resolve the output root: CLI flag, then environment, then config."""
        if cli_value:
            return Path(cli_value)
        env_value = os.environ.get(OUTPUT_ROOT_ENV)
        if env_value:
            return Path(env_value)
        return Path(self.get('runtime.output_dir', 'runs/default'))


# Global configuration instance
config = Config()
