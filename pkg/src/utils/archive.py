"""Model archives: ``weights.pt`` (named tensors) plus an ``archive.yaml`` manifest."""

import hashlib
import logging
from pathlib import Path
from typing import Any, Dict, Optional

import torch

from src.utils.errors import DependencyError, PersistenceError
from src.utils.records import read_record, write_record

logger = logging.getLogger(__name__)

WEIGHTS_NAME = 'weights.pt'
MANIFEST_NAME = 'archive.yaml'


def parameter_hash(state: Dict[str, torch.Tensor]) -> str:
    """sha256 over names and raw bytes of every tensor, in name order."""
    digest = hashlib.sha256()
    for name in sorted(state):
        tensor = state[name].detach().cpu().contiguous()
        digest.update(name.encode('utf-8'))
        digest.update(str(tensor.dtype).encode('utf-8'))
        digest.update(tensor.numpy().tobytes())
    return digest.hexdigest()


def module_hash(module: torch.nn.Module) -> str:
    return parameter_hash(module.state_dict())


def save_archive(directory: Path, state: Dict[str, torch.Tensor], descriptor: Dict[str, Any],
                 metadata: Optional[Dict[str, Any]] = None) -> Path:
    """Persist named tensors and their manifest (shapes, dtype, architecture, metadata)."""
    directory = Path(directory)
    state = {k: v.detach().cpu() for k, v in state.items()}
    manifest = {
        'architecture': descriptor,
        'parameter_hash': parameter_hash(state),
        'tensors': {k: {'shape': list(v.shape), 'dtype': str(v.dtype)} for k, v in state.items()},
    }
    manifest.update(metadata or {})
    try:
        directory.mkdir(parents=True, exist_ok=True)
        torch.save(state, directory / WEIGHTS_NAME)
    except OSError as e:
        raise PersistenceError(f"Could not write archive {directory}: {e}") from e
    write_record(directory / MANIFEST_NAME, manifest)
    logger.info(f"Archive written to {directory} ({len(state)} tensors)")
    return directory


def load_archive(directory: Path, stage: str):
    """Return (state, manifest); a missing archive means the stage was never trained."""
    directory = Path(directory)
    if not (directory / WEIGHTS_NAME).exists() or not (directory / MANIFEST_NAME).exists():
        raise DependencyError(f"No {stage} archive in {directory}: train {stage} first")
    manifest = read_record(directory / MANIFEST_NAME)
    try:
        state = torch.load(directory / WEIGHTS_NAME, map_location='cpu', weights_only=True)
    except (OSError, RuntimeError) as e:
        raise PersistenceError(f"Could not read {directory / WEIGHTS_NAME}: {e}") from e
    if parameter_hash(state) != manifest.get('parameter_hash'):
        raise PersistenceError(f"Archive {directory} weights do not match their recorded hash")
    return state, manifest
