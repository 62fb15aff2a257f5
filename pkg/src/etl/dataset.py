"""Dataset generation and the on-disk manifest."""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from src.etl.synth import (
    HEALTHY, LABEL_NAMES, PATHOLOGICAL, LabeledImage, SynthConfig, generate_sample,
)
from src.utils.errors import ConfigurationError, PersistenceError
from src.utils.imaging import load_gray16, load_mask8, save_gray16, save_mask8
from src.utils.records import file_sha256, read_record, write_record

logger = logging.getLogger(__name__)

SPLITS = ('train', 'val', 'test')
MANIFEST_NAME = 'manifest.yaml'


def config_fingerprint(cfg: SynthConfig) -> str:
    canonical = json.dumps(asdict(cfg), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


@dataclass
class SampleRecord:
    """One manifest line: where a sample lives and how to regenerate it."""

    sample_id: str
    split: str
    label: int
    seed: int
    image: str
    mask: str
    organ: str
    image_sha256: str = ''
    lesion_count: int = 0

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class DatasetManifest:
    """Split assignments, per-sample files, seeds and labels, config fingerprint."""

    root: Path
    config: SynthConfig
    fingerprint: str
    records: List[SampleRecord] = field(default_factory=list)

    def split(self, name: str, label: Optional[int] = None) -> List[SampleRecord]:
        if name not in SPLITS:
            raise ConfigurationError(f"Unknown split: {name}")
        return [r for r in self.records if r.split == name and (label is None or r.label == label)]

    def split_sizes(self) -> Dict[str, int]:
        return {name: len(self.split(name)) for name in SPLITS}

    def load(self, record: SampleRecord) -> LabeledImage:
        """Read a sample back from disk; a missing image is rebuilt from its seed."""
        path = self.root / record.image
        if not path.exists():
            logger.warning(f"{record.image} is missing; regenerating {record.sample_id} from seed {record.seed}")
            return self.regenerate(record)
        if record.image_sha256 and file_sha256(path) != record.image_sha256:
            raise PersistenceError(f"{record.image} does not match the sha256 recorded in the manifest")
        return LabeledImage(
            pixels=load_gray16(self.root / record.image),
            label=record.label,
            gt_mask=load_mask8(self.root / record.mask),
            seed=record.seed,
            organ_mask=load_mask8(self.root / record.organ),
        )

    def regenerate(self, record: SampleRecord) -> LabeledImage:
        """Rebuild a sample from its seed (must match the stored files bit for bit)."""
        return generate_sample(record.seed, record.label, self.config)

    def save(self) -> Path:
        return write_record(self.root / MANIFEST_NAME, {
            'config_hash': self.fingerprint,
            'image_size': list(self.config.image_size),
            'config': _jsonable(asdict(self.config)),
            'split_sizes': self.split_sizes(),
            'samples': [r.to_dict() for r in self.records],
        })


def _jsonable(values: Dict) -> Dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in values.items()}


def load_manifest(path: Path) -> DatasetManifest:
    """Load a manifest file or the manifest inside a dataset directory."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    data = read_record(path)
    try:
        cfg = SynthConfig.from_section(data['config'])
        records = [SampleRecord(**r) for r in data['samples']]
        fingerprint = data['config_hash']
    except (KeyError, TypeError) as e:
        raise PersistenceError(f"Malformed manifest {path}: {e}") from e
    if fingerprint != config_fingerprint(cfg):
        raise PersistenceError(f"Manifest {path} config hash does not match its config section")
    return DatasetManifest(root=path.parent, config=cfg, fingerprint=fingerprint, records=records)


def _split_counts(n: int, fractions) -> List[int]:
    n_train = int(round(n * fractions[0]))
    n_val = int(round(n * fractions[1]))
    n_val = min(n_val, n - n_train)
    return [n_train, n_val, n - n_train - n_val]


def _draw_seeds(master_seed: int, n: int) -> np.ndarray:
    seeds = np.random.SeedSequence(master_seed).generate_state(max(n, 1), dtype=np.uint32)[:n]
    if len(np.unique(seeds)) != n:
        raise ConfigurationError(f"Seed collision for master_seed={master_seed}; pick another")
    return seeds.astype(np.int64)


def generate_dataset(config: SynthConfig, out_dir: Path) -> DatasetManifest:
    """Write every sample plus the manifest; splits are stratified per class."""
    config.validate()
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise PersistenceError(f"Output directory {out_dir} is not writable: {e}") from e

    total = config.n_healthy + config.n_pathological
    seeds = _draw_seeds(config.master_seed, total)
    labels = [HEALTHY] * config.n_healthy + [PATHOLOGICAL] * config.n_pathological

    manifest = DatasetManifest(root=out_dir, config=config, fingerprint=config_fingerprint(config))
    cursor = 0
    for label, count in ((HEALTHY, config.n_healthy), (PATHOLOGICAL, config.n_pathological)):
        split_names = []
        for name, size in zip(SPLITS, _split_counts(count, config.split_fractions)):
            split_names.extend([name] * size)
        for offset, split in enumerate(split_names):
            index = cursor + offset
            seed = int(seeds[index])
            sample_id = f"{LABEL_NAMES[label][0]}{index:05d}"
            sample = generate_sample(seed, labels[index], config)
            rel = Path('images') / split
            record = SampleRecord(
                sample_id=sample_id,
                split=split,
                label=label,
                seed=seed,
                image=str(rel / f"{sample_id}.png"),
                mask=str(rel / f"{sample_id}_mask.png"),
                organ=str(rel / f"{sample_id}_organ.png"),
            )
            save_gray16(out_dir / record.image, sample.pixels)
            record.image_sha256 = file_sha256(out_dir / record.image)
            record.lesion_count = len(sample.lesion_centers)
            save_mask8(out_dir / record.mask, sample.gt_mask)
            save_mask8(out_dir / record.organ, sample.organ_mask)
            manifest.records.append(record)
        cursor += count

    manifest.save()
    lesions = sum(r.lesion_count for r in manifest.records)
    logger.info(f"Dataset written to {out_dir}: {manifest.split_sizes()}, {lesions} lesions")
    return manifest
