"""Single-pass attribution: soft map, binary map and the counterfactual scores."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import torch

from src.nets.attributor import AttributorModel, threshold_mask
from src.nets.inpainter import InpainterModel, full_hole, inpaint
from src.utils.errors import ContractError
from src.utils.imaging import save_gray16, save_mask8, save_overlay
from src.utils.records import write_record

logger = logging.getLogger(__name__)

BELOW_THRESHOLD_NOTE = "below threshold; attribution not meaningful"


@dataclass
class AttributionResult:
    """Maps and scores for one image."""

    soft_mask: np.ndarray
    binary_mask: np.ndarray
    score_original: float
    score_marginalized: float
    area: int
    theta: float
    area_budget: Optional[float]
    encoder_passes: int
    full_hole: bool = False
    sample_id: Optional[str] = None

    @property
    def below_threshold(self) -> bool:
        return self.score_original < self.theta

    @property
    def score_satisfied(self) -> bool:
        return self.score_marginalized <= self.theta

    @property
    def area_satisfied(self) -> bool:
        return self.area_budget is None or self.area <= self.area_budget

    @property
    def constraint_satisfied(self) -> bool:
        return self.score_satisfied and self.area_satisfied

    def sidecar(self) -> Dict[str, Any]:
        record = {
            'sample_id': self.sample_id,
            'score_original': self.score_original,
            'score_marginalized': self.score_marginalized,
            'area': self.area,
            'theta': self.theta,
            'area_budget': self.area_budget,
            'score_satisfied': self.score_satisfied,
            'area_satisfied': self.area_satisfied,
            'constraint_satisfied': self.constraint_satisfied,
            'below_threshold': self.below_threshold,
            'full_hole': self.full_hole,
            'encoder_passes': self.encoder_passes,
        }
        if self.below_threshold:
            record['note'] = BELOW_THRESHOLD_NOTE
        return record


def _batch(images: torch.Tensor) -> torch.Tensor:
    if images.dim() == 2:
        return images[None, None]
    if images.dim() == 3:
        return images[:, None]
    return images


def attribute_batch(model: AttributorModel, inpainter: InpainterModel, images: torch.Tensor,
                    sample_ids: Optional[Sequence[str]] = None) -> List[AttributionResult]:
    """
    One attributor forward pass for the batch, then one scorer call on the
    counterfactuals. ``encoder_passes`` counts feature extractions inside
    the forward pass only.
    """
    x = _batch(images)
    if sample_ids is not None and len(sample_ids) != x.shape[0]:
        raise ContractError("sample_ids must match the number of images")
    model.eval()
    theta = float(model.encoder.threshold)
    t = model.config.threshold

    with torch.no_grad():
        before = model.encoder.feature_calls
        soft, pyramid = model.forward_with_pyramid(x)
        passes = model.encoder.feature_calls - before
        s0 = model.encoder.head_score(pyramid.deepest)
        binary = threshold_mask(soft, t)
        counterfactual = inpaint(inpainter, x, binary.to(x.dtype))
        s1 = model.encoder(counterfactual)
        flags = full_hole(binary.to(x.dtype))

    results = []
    for i in range(x.shape[0]):
        if bool(s0[i] < theta):
            logger.info(f"Image {sample_ids[i] if sample_ids else i}: {BELOW_THRESHOLD_NOTE}")
        results.append(AttributionResult(
            soft_mask=soft[i, 0].double().cpu().numpy(),
            binary_mask=binary[i, 0].cpu().numpy(),
            score_original=float(s0[i]),
            score_marginalized=float(s1[i]),
            area=int(binary[i].sum()),
            theta=theta,
            area_budget=getattr(model, 'area_budget', None),
            encoder_passes=passes,
            full_hole=bool(flags[i]),
            sample_id=sample_ids[i] if sample_ids else None,
        ))
    return results


def attribute(model: AttributorModel, inpainter: InpainterModel, image: torch.Tensor,
              sample_id: Optional[str] = None) -> AttributionResult:
    """Attribution for a single image (H,W) or (1,1,H,W)."""
    x = _batch(image)
    if x.shape[0] != 1:
        raise ContractError("attribute takes one image; use attribute_batch for stacks")
    return attribute_batch(model, inpainter, x, [sample_id] if sample_id else None)[0]


def attribute_many(model: AttributorModel, inpainter: InpainterModel, images: torch.Tensor,
                   sample_ids: Sequence[str], batch_size: int = 32) -> List[AttributionResult]:
    results: List[AttributionResult] = []
    for start in range(0, images.shape[0], batch_size):
        results.extend(attribute_batch(model, inpainter, images[start:start + batch_size],
                                       list(sample_ids[start:start + batch_size])))
    return results


def save_result(result: AttributionResult, out_dir: Path, pixels: np.ndarray, name: Optional[str] = None) -> Path:
    """Write ``<name>_soft.png`` (16-bit), ``<name>_mask.png``, ``<name>_overlay.png`` and ``<name>.yaml``."""
    out_dir = Path(out_dir)
    name = name or result.sample_id or 'image'
    save_gray16(out_dir / f"{name}_soft.png", result.soft_mask)
    save_mask8(out_dir / f"{name}_mask.png", result.binary_mask)
    save_overlay(out_dir / f"{name}_overlay.png", pixels, result.soft_mask)
    return write_record(out_dir / f"{name}.yaml", result.sidecar())
