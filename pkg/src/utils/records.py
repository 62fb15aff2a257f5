"""Structured text records (YAML) and content hashes."""

import hashlib
from pathlib import Path
from typing import Any, Dict

import yaml

from src.utils.errors import PersistenceError


def write_record(path: Path, record: Dict[str, Any]) -> Path:
    """Write a mapping as YAML, creating parent directories."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w') as f:
            yaml.safe_dump(record, f, sort_keys=False)
    except OSError as e:
        raise PersistenceError(f"Could not write {path}: {e}") from e
    return path


def read_record(path: Path) -> Dict[str, Any]:
    """Read a YAML mapping written by :func:`write_record`."""
    path = Path(path)
    if not path.exists():
        raise PersistenceError(f"Record not found: {path}")
    try:
        with open(path, 'r') as f:
            data = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        raise PersistenceError(f"Could not read {path}: {e}") from e
    if not isinstance(data, dict):
        raise PersistenceError(f"Record {path} is not a mapping")
    return data


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b''):
            digest.update(chunk)
    return digest.hexdigest()
