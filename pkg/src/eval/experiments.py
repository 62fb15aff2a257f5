"""Evaluation experiments: perturbation ROC, weight randomization, map-mass localization."""

import copy
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import torch
from scipy import ndimage

from src.etl.loader import SplitTensors
from src.etl.masks import MaskConfig, generate_irregular_mask
from src.eval.metrics import EIGHT_CONNECTED, connected_component_boxes, mask_iou, roc_auc, roc_points
from src.eval.statistics import rank_correlation
from src.nets.attributor import AttributorModel, threshold_mask
from src.nets.inpainter import InpainterModel, inpaint
from src.nets.scorer import ScorerModel

logger = logging.getLogger(__name__)

BASELINE = 'baseline'
HEALTHY_INPAINT = 'healthy_inpaint'
PATHOLOGICAL_INPAINT = 'pathological_inpaint'
CHANCE_STD_FLOOR = 1e-9


def _scores(scorer: ScorerModel, images: torch.Tensor, batch_size: int = 64) -> np.ndarray:
    scorer.eval()
    out = []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            out.append(scorer(images[start:start + batch_size]).double().numpy())
    return np.concatenate(out)


def _inpainted_scores(scorer: ScorerModel, inpainter: InpainterModel, images: torch.Tensor,
                      holes: np.ndarray, batch_size: int = 64) -> np.ndarray:
    hole_t = torch.as_tensor(holes[:, None], dtype=images.dtype)
    filled = []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            filled.append(inpaint(inpainter, images[start:start + batch_size], hole_t[start:start + batch_size]))
    return _scores(scorer, torch.cat(filled), batch_size)


@dataclass
class PerturbationReport:
    """AUCs without inpainting, with inpainting in healthy regions and in pathological regions."""

    baseline_auc: float
    healthy_aucs: List[float]
    pathological_aucs: List[float]
    curves: Dict[str, Tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=dict)

    @property
    def healthy_auc(self) -> float:
        return float(np.mean(self.healthy_aucs))

    @property
    def pathological_auc(self) -> float:
        return float(np.mean(self.pathological_aucs))

    @property
    def pathological_gap(self) -> float:
        return self.baseline_auc - self.pathological_auc

    @property
    def healthy_shift(self) -> float:
        return abs(self.baseline_auc - self.healthy_auc)

    def runs_frame(self) -> pd.DataFrame:
        rows = [{'condition': BASELINE, 'run': 0, 'auc': self.baseline_auc}]
        rows += [{'condition': HEALTHY_INPAINT, 'run': i, 'auc': a} for i, a in enumerate(self.healthy_aucs)]
        rows += [{'condition': PATHOLOGICAL_INPAINT, 'run': i, 'auc': a} for i, a in enumerate(self.pathological_aucs)]
        return pd.DataFrame(rows)

    def roc_frame(self) -> pd.DataFrame:
        frames = []
        for name, (fpr, tpr, thresholds) in self.curves.items():
            frames.append(pd.DataFrame({'condition': name, 'fpr': fpr, 'tpr': tpr, 'threshold': thresholds}))
        return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(
            columns=['condition', 'fpr', 'tpr', 'threshold'])

    def summary(self) -> Dict[str, float]:
        return {
            'baseline_auc': self.baseline_auc,
            'healthy_inpaint_auc': self.healthy_auc,
            'healthy_inpaint_auc_std': float(np.std(self.healthy_aucs)),
            'pathological_inpaint_auc': self.pathological_auc,
            'pathological_inpaint_auc_std': float(np.std(self.pathological_aucs)),
            'pathological_gap': self.pathological_gap,
            'healthy_shift': self.healthy_shift,
        }


def perturbation_roc_experiment(scorer: ScorerModel, inpainter: InpainterModel, split: SplitTensors,
                                mask_config: MaskConfig, runs: int = 10, seed: int = 0,
                                gt_margin: int = 2) -> PerturbationReport:
    """
    Classifier ROC on a test split before and after inpainting.

    Healthy-region runs inpaint random irregular holes from which the
    ``gt_margin``-dilated lesions are removed. Pathological-region runs inpaint
    each lesion (dilated by 1 to ``gt_margin + 1`` pixels, varying per run) on
    pathological images and a random irregular hole on healthy images.
    """
    labels = split.labels.numpy()
    images = split.images
    gts = split.gt_masks[:, 0].numpy() > 0.5
    shape = tuple(images.shape[-2:])

    base_scores = _scores(scorer, images)
    report = PerturbationReport(baseline_auc=roc_auc(base_scores, labels), healthy_aucs=[], pathological_aucs=[])
    report.curves[BASELINE] = roc_points(base_scores, labels)

    for run in range(runs):
        rng = np.random.default_rng([seed, run])
        random_holes = np.stack([
            generate_irregular_mask(int(s), mask_config, shape) for s in rng.integers(0, 2 ** 31 - 1, len(labels))
        ])

        protected = np.stack([
            ndimage.binary_dilation(g, structure=EIGHT_CONNECTED, iterations=gt_margin) if g.any() and gt_margin > 0 else g
            for g in gts
        ])
        healthy_holes = random_holes & ~protected
        scores = _inpainted_scores(scorer, inpainter, images, healthy_holes)
        report.healthy_aucs.append(roc_auc(scores, labels))
        if run == 0:
            report.curves[HEALTHY_INPAINT] = roc_points(scores, labels)

        lesion_holes = random_holes.copy()
        for i, g in enumerate(gts):
            if labels[i] == 1 and g.any():
                grow = int(rng.integers(1, gt_margin + 2))
                lesion_holes[i] = ndimage.binary_dilation(g, structure=EIGHT_CONNECTED, iterations=grow)
        scores = _inpainted_scores(scorer, inpainter, images, lesion_holes)
        report.pathological_aucs.append(roc_auc(scores, labels))
        if run == 0:
            report.curves[PATHOLOGICAL_INPAINT] = roc_points(scores, labels)

        logger.info(f"Perturbation run {run}: healthy AUC={report.healthy_aucs[-1]:.4f} "
                    f"pathological AUC={report.pathological_aucs[-1]:.4f}")

    logger.info(f"Perturbation ROC: {report.summary()}")
    return report


def area_matched_random_mask(rng: np.random.Generator, shape: Tuple[int, int], area: int) -> np.ndarray:
    mask = np.zeros(int(np.prod(shape)), dtype=bool)
    mask[rng.choice(mask.size, size=min(int(area), mask.size), replace=False)] = True
    return mask.reshape(shape)


@dataclass
class SanityReport:
    """One control row (trained vs itself) plus one row per randomized draw."""

    rows: pd.DataFrame
    passed: bool

    def to_frame(self) -> pd.DataFrame:
        return self.rows


def _soft_maps(model: AttributorModel, images: torch.Tensor, batch_size: int = 64) -> np.ndarray:
    model.eval()
    out = []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            out.append(model(images[start:start + batch_size])[:, 0].double().numpy())
    return np.concatenate(out)


def _mean_iou(binary: np.ndarray, gts: np.ndarray) -> float:
    return float(np.mean([mask_iou(b, g) for b, g in zip(binary, gts)]))


def _chance_iou(rng: np.random.Generator, binary: np.ndarray, gts: np.ndarray, draws: int) -> Tuple[float, float]:
    samples = []
    for _ in range(draws):
        samples.append(np.mean([
            mask_iou(area_matched_random_mask(rng, g.shape, int(b.sum())), g) for b, g in zip(binary, gts)
        ]))
    return float(np.mean(samples)), float(np.std(samples))


def randomization_sanity_check(model: AttributorModel, images: torch.Tensor, gt_masks: np.ndarray,
                               n_draws: int = 10, chance_draws: int = 100, seed: int = 0,
                               correlation_limit: float = 0.1) -> SanityReport:
    """
    Re-initialize gates, decoder and head ``n_draws`` times and compare with the trained maps.

    A draw is at chance when its mean IOU with ground truth lies within two
    standard deviations of the area-matched random-mask baseline and its mean
    absolute rank correlation with the trained maps is below ``correlation_limit``.
    A draw whose baseline has no spread (masks covering all or none of every
    image) is inconclusive and fails the check.
    """
    gts = np.asarray(gt_masks, dtype=bool)
    t = model.config.threshold
    trained = _soft_maps(model, images)
    trained_binary = trained >= t
    rng = np.random.default_rng(seed)

    rows = [{
        'draw': 'control',
        'mean_iou': _mean_iou(trained_binary, gts),
        'rank_correlation': float(np.mean([rank_correlation(m, m) for m in trained])),
        'coverage': float(trained_binary.mean()),
        'chance_iou_mean': np.nan,
        'chance_iou_std': np.nan,
        'at_chance': False,
        'inconclusive': False,
    }]

    passed = True
    for draw in range(n_draws):
        randomized = copy.deepcopy(model)
        randomized.reinitialize(torch.Generator().manual_seed(seed * 1000 + draw + 1))
        maps = _soft_maps(randomized, images)
        binary = maps >= t
        iou = _mean_iou(binary, gts)
        corr = float(np.mean([abs(rank_correlation(a, b)) for a, b in zip(maps, trained)]))
        chance_mean, chance_std = _chance_iou(rng, binary, gts, chance_draws)
        coverage = float(binary.mean())
        inconclusive = chance_std <= CHANCE_STD_FLOOR
        at_chance = not inconclusive and abs(iou - chance_mean) <= 2 * chance_std and corr < correlation_limit
        passed = passed and at_chance
        rows.append({
            'draw': str(draw),
            'mean_iou': iou,
            'rank_correlation': corr,
            'coverage': coverage,
            'chance_iou_mean': chance_mean,
            'chance_iou_std': chance_std,
            'at_chance': at_chance,
            'inconclusive': inconclusive,
        })
        logger.info(f"Sanity draw {draw}: IOU={iou:.4f} (chance {chance_mean:.4f}±{chance_std:.4f}) "
                    f"|rho|={corr:.3f} coverage={coverage:.3f}")
        if inconclusive:
            logger.warning(f"Sanity draw {draw} is inconclusive: area-matched baseline has no spread "
                           f"at coverage {coverage:.3f}")

    return SanityReport(rows=pd.DataFrame(rows), passed=passed)


@dataclass
class MassLocalizationReport:
    """Per-image share of map mass inside the lesion boxes vs circularly shifted maps."""

    rows: pd.DataFrame

    @property
    def hit_rate(self) -> float:
        return float(self.rows['hit'].mean()) if len(self.rows) else 0.0


def box_region(gt_mask: np.ndarray) -> np.ndarray:
    """Union of the bounding boxes of the mask's components."""
    region = np.zeros(gt_mask.shape, dtype=bool)
    for box in connected_component_boxes(gt_mask):
        region[box.row_min:box.row_max + 1, box.col_min:box.col_max + 1] = True
    return region


def _mass_share(heat: np.ndarray, region: np.ndarray) -> float:
    total = float(heat.sum())
    return float(heat[region].sum()) / total if total > 0 else 0.0


def map_mass_localization(maps: np.ndarray, gt_masks: np.ndarray, shifts: int = 20, seed: int = 0,
                          sample_ids: Optional[List[str]] = None) -> MassLocalizationReport:
    """A map localizes when its mass inside the lesion boxes beats the mean over random circular shifts."""
    rng = np.random.default_rng(seed)
    rows = []
    for i, (heat, gt) in enumerate(zip(np.asarray(maps, dtype=np.float64), np.asarray(gt_masks, dtype=bool))):
        if not gt.any():
            continue
        region = box_region(gt)
        observed = _mass_share(heat, region)
        h, w = heat.shape
        chance = float(np.mean([
            _mass_share(np.roll(heat, (int(rng.integers(h)), int(rng.integers(w))), axis=(0, 1)), region)
            for _ in range(shifts)
        ]))
        rows.append({
            'sample_id': sample_ids[i] if sample_ids else str(i),
            'mass_in_box': observed,
            'chance_mass': chance,
            'hit': observed > chance,
        })
    return MassLocalizationReport(rows=pd.DataFrame(rows, columns=['sample_id', 'mass_in_box', 'chance_mass', 'hit']))
