"""
Comparison report: per-image records, the H/L/A table, Wilcoxon tests and acceptance checks.

Every table cell is an aggregate of ``per_image.csv`` rows, so the report can
be rebuilt from the CSV alone with :func:`report_from_records`.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.eval.metrics import (
    area_ratio, connected_component_boxes, hausdorff, percentile_threshold, weak_localization,
)
from src.eval.statistics import wilcoxon_signed_rank
from src.utils.errors import ConfigurationError, ContractError, PersistenceError

logger = logging.getLogger(__name__)

OURS = 'ours'
METHOD_ORDER = (OURS, 'cam', 'saliency')
RECORD_COLUMNS = ['sample_id', 'method', 'percentile', 'hausdorff', 'localization',
                  'area_organ', 'area_image', 'area_px']


@dataclass(frozen=True)
class EvalConfig:
    """The ``eval`` config section."""

    percentiles: Tuple[float, ...] = (50, 75, 90)
    iou_threshold: float = 0.125
    literal_iou_reading: bool = False
    localization_reduction: str = 'median'
    roc_runs: int = 10
    sanity_draws: int = 10
    chance_draws: int = 100
    cam_shifts: int = 20
    alpha: float = 0.05

    @classmethod
    def from_section(cls, section: Dict[str, Any]) -> "EvalConfig":
        unknown = set(section) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"Unknown eval keys: {sorted(unknown)}")
        cfg = cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in section.items()})
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not self.percentiles or any(not 0 < p < 100 for p in self.percentiles):
            raise ConfigurationError("eval.percentiles must be a non-empty list of values in (0, 100)")
        if not 0.0 < self.iou_threshold < 1.0:
            raise ConfigurationError("eval.iou_threshold must be in (0, 1)")
        if self.localization_reduction not in ('mean', 'median'):
            raise ConfigurationError("eval.localization_reduction must be 'mean' or 'median'")
        if min(self.roc_runs, self.sanity_draws, self.chance_draws, self.cam_shifts) < 1:
            raise ConfigurationError("eval run and draw counts must be at least 1")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError("eval.alpha must be in (0, 1)")


def compute_image_records(sample_ids: Sequence[str], ours_binary: np.ndarray, baseline_maps: Dict[str, np.ndarray],
                          gt_masks: np.ndarray, organ_masks: np.ndarray, percentiles: Sequence[float] = (50, 75, 90),
                          tau: float = 0.125, literal: bool = False, reduction: str = 'median') -> pd.DataFrame:
    """One row per (image, method, percentile).

    Our binary mask is used as is for every percentile row; baseline maps are
    thresholded at each percentile.
    """
    n = len(sample_ids)
    if len(ours_binary) != n or len(gt_masks) != n or len(organ_masks) != n:
        raise ContractError("Per-image inputs must all have one entry per sample")

    rows = []
    for i, sample_id in enumerate(sample_ids):
        gt = np.asarray(gt_masks[i], dtype=bool)
        organ = np.asarray(organ_masks[i], dtype=bool)
        gt_boxes = connected_component_boxes(gt)
        predictions = {OURS: {p: np.asarray(ours_binary[i], dtype=bool) for p in percentiles}}
        for method, maps in baseline_maps.items():
            predictions[method] = {p: percentile_threshold(maps[i], p) for p in percentiles}

        for method, by_p in predictions.items():
            for p, mask in by_p.items():
                loc = weak_localization(gt_boxes, connected_component_boxes(mask), tau=tau,
                                        literal=literal, reduction=reduction)
                rows.append({
                    'sample_id': sample_id,
                    'method': method,
                    'percentile': p,
                    'hausdorff': hausdorff(gt, mask),
                    'localization': np.nan if loc is None else loc,
                    'area_organ': area_ratio(mask, organ) if organ.any() else np.nan,
                    'area_image': area_ratio(mask),
                    'area_px': int(mask.sum()),
                })
    return pd.DataFrame(rows, columns=RECORD_COLUMNS)


@dataclass
class MetricsReport:
    """H/L/A table per percentile and method, Wilcoxon p-values for ours vs each baseline."""

    records: pd.DataFrame
    table: pd.DataFrame
    wilcoxon: pd.DataFrame
    n_samples: int
    alpha: float = 0.05

    @property
    def methods(self) -> List[str]:
        present = list(self.records['method'].unique())
        return [m for m in METHOD_ORDER if m in present] + [m for m in present if m not in METHOD_ORDER]

    def cell(self, percentile: float, method: str, column: str) -> float:
        row = self.table[(self.table['percentile'] == percentile) & (self.table['method'] == method)]
        if row.empty:
            raise ContractError(f"No report row for P{percentile}/{method}")
        return float(row.iloc[0][column])

    def to_text(self) -> str:
        """Plain-text table: one row per percentile, H, L and A blocks with one column per method."""
        methods = self.methods
        header = ['P'] + [f"H_{m}" for m in methods] + [f"L_{m}" for m in methods] + [f"A_{m}" for m in methods]
        lines = []
        for p in sorted(self.table['percentile'].unique()):
            cells = [f"P{int(p)}"]
            for m in methods:
                cells.append(f"{self.cell(p, m, 'H_mean'):.2f}±{self.cell(p, m, 'H_std'):.1f}")
            for m in methods:
                cells.append(f"{self.cell(p, m, 'L'):.2f}")
            for m in methods:
                cells.append(f"{self.cell(p, m, 'A_mean'):.2f}±{self.cell(p, m, 'A_std'):.2f}")
            lines.append(cells)
        widths = [max(len(row[j]) for row in [header] + lines) for j in range(len(header))]
        out = ['  '.join(h.rjust(w) for h, w in zip(header, widths))]
        out += ['  '.join(c.rjust(w) for c, w in zip(row, widths)) for row in lines]
        out.append('')
        out.append(f"n = {self.n_samples} images; Wilcoxon signed-rank on per-image H (alpha = {self.alpha}):")
        for _, row in self.wilcoxon.iterrows():
            mark = '*' if row['p_value'] < self.alpha else ' '
            out.append(f"  P{int(row['percentile'])} {OURS} vs {row['baseline']}: p = {row['p_value']:.4g}{mark} "
                       f"(median H {row['median_h_ours']:.2f} vs {row['median_h_baseline']:.2f})")
        return '\n'.join(out)

    def save(self, out_dir: Path) -> Path:
        out_dir = Path(out_dir)
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            self.records.to_csv(out_dir / 'per_image.csv', index=False)
            self.table.to_csv(out_dir / 'report_table.csv', index=False)
            self.wilcoxon.to_csv(out_dir / 'wilcoxon.csv', index=False)
            (out_dir / 'report.txt').write_text(self.to_text() + '\n')
        except OSError as e:
            raise PersistenceError(f"Could not write report to {out_dir}: {e}") from e
        logger.info(f"Report written to {out_dir}")
        return out_dir


def report_from_records(records: pd.DataFrame, alpha: float = 0.05) -> MetricsReport:
    """Aggregate per-image records into the comparison report."""
    grouped = records.groupby(['percentile', 'method'], sort=True)
    table = grouped.agg(
        H_mean=('hausdorff', 'mean'),
        H_std=('hausdorff', lambda s: float(np.std(s))),
        H_median=('hausdorff', 'median'),
        L=('localization', 'mean'),
        A_mean=('area_organ', 'mean'),
        A_std=('area_organ', lambda s: float(np.std(s))),
        A_image=('area_image', 'mean'),
        n=('sample_id', 'count'),
    ).reset_index()

    tests = []
    for p in sorted(records['percentile'].unique()):
        at_p = records[records['percentile'] == p]
        ours = at_p[at_p['method'] == OURS].set_index('sample_id')['hausdorff']
        for baseline in [m for m in at_p['method'].unique() if m != OURS]:
            other = at_p[at_p['method'] == baseline].set_index('sample_id')['hausdorff']
            common = ours.index.intersection(other.index)
            if len(common) == 0:
                continue
            x, y = ours.loc[common].to_numpy(), other.loc[common].to_numpy()
            tests.append({
                'percentile': p,
                'baseline': baseline,
                'n': int(len(common)),
                'median_h_ours': float(np.median(x)),
                'median_h_baseline': float(np.median(y)),
                'p_value': wilcoxon_signed_rank(x, y),
            })
    wilcoxon = pd.DataFrame(tests, columns=['percentile', 'baseline', 'n', 'median_h_ours',
                                            'median_h_baseline', 'p_value'])
    return MetricsReport(records=records, table=table, wilcoxon=wilcoxon,
                         n_samples=int(records['sample_id'].nunique()), alpha=alpha)


def build_comparison_report(sample_ids: Sequence[str], ours_binary: np.ndarray, baseline_maps: Dict[str, np.ndarray],
                            gt_masks: np.ndarray, organ_masks: np.ndarray, percentiles: Sequence[float] = (50, 75, 90),
                            tau: float = 0.125, literal: bool = False, reduction: str = 'median',
                            alpha: float = 0.05) -> MetricsReport:
    records = compute_image_records(sample_ids, ours_binary, baseline_maps, gt_masks, organ_masks,
                                    percentiles, tau, literal, reduction)
    return report_from_records(records, alpha)


def load_report(out_dir: Path, alpha: float = 0.05) -> MetricsReport:
    """Rebuild a report from its persisted per-image records."""
    path = Path(out_dir) / 'per_image.csv'
    if not path.exists():
        raise PersistenceError(f"Per-image records not found: {path}")
    return report_from_records(pd.read_csv(path, dtype={'sample_id': str}), alpha)


@dataclass
class AcceptanceCheck:
    criterion: str
    value: Optional[float]
    target: str
    passed: bool


def write_acceptance(checks: Sequence[AcceptanceCheck], path: Path) -> pd.DataFrame:
    frame = pd.DataFrame([vars(c) for c in checks], columns=['criterion', 'value', 'target', 'passed'])
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False)
    except OSError as e:
        raise PersistenceError(f"Could not write {path}: {e}") from e
    for check in checks:
        marker = '✓' if check.passed else '✗'
        value = 'n/a' if check.value is None else f"{check.value:.4f}"
        logger.info(f"{marker} {check.criterion}: {value} (target {check.target})")
    return frame
