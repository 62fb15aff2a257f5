"""Constrained counterfactual loss for attributor training.

total = g(phi) + g(-psi) + lambda * g(R) + rho * (max(0, d - delta) / scale)^2

phi = -log(1 - p(c|pi(M))) pushes the marginalized image towards "healthy";
psi = log odds(I) - log odds(pi(M)) is maximized, so it enters negated. R is
an edge-weighted total variation of the soft mask and d its area. Each raw
term passes through a generalized logistic g before weighting.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import torch

from src.nets.inpainter import InpainterModel, composite
from src.nets.scorer import ScorerModel
from src.utils.errors import ConfigurationError, ContractError

logger = logging.getLogger(__name__)

LOGISTIC_TERMS = ('phi', 'psi', 'tv')


def _default_logistic() -> Dict[str, Tuple[float, float]]:
    return {name: (1.0, 0.0) for name in LOGISTIC_TERMS}


@dataclass(frozen=True)
class ConstraintConfig:
    """θ, δ, λ, the penalty schedule and per-term logistic (k, x0)."""

    theta: float
    delta: float
    tv_weight: float = 0.5
    penalty_initial: float = 1.0
    penalty_factor: float = 2.0
    penalty_every: int = 200
    penalty_scale: Optional[float] = None
    logistic: Dict[str, Tuple[float, float]] = field(default_factory=_default_logistic)
    threshold: float = 0.55
    straight_through: bool = True
    epsilon: float = 1e-6

    @classmethod
    def from_section(cls, section: Dict[str, Any], theta: float, delta: float) -> "ConstraintConfig":
        """Build from the ``attributor`` section; θ comes from the scorer and δ is resolved by the caller."""
        logistic = _default_logistic()
        for name, pair in (section.get('logistic') or {}).items():
            if name not in LOGISTIC_TERMS:
                raise ConfigurationError(f"Unknown logistic term: {name}")
            logistic[name] = (float(pair[0]), float(pair[1]))
        cfg = cls(
            theta=float(theta),
            delta=float(delta),
            tv_weight=float(section.get('tv_weight', 0.5)),
            penalty_initial=float(section.get('penalty_initial', 1.0)),
            penalty_factor=float(section.get('penalty_factor', 2.0)),
            penalty_every=int(section.get('penalty_every', 200)),
            penalty_scale=section.get('penalty_scale'),
            logistic=logistic,
            threshold=float(section.get('threshold', 0.55)),
            straight_through=bool(section.get('straight_through', True)),
        )
        return cfg

    def validate(self, image_shape: Optional[Tuple[int, int]] = None) -> None:
        if not 0.0 < self.theta < 1.0:
            raise ConfigurationError(f"theta must lie in (0,1): {self.theta}")
        if self.delta <= 0:
            raise ConfigurationError(f"area budget delta must be positive: {self.delta}")
        if image_shape is not None and self.delta >= image_shape[0] * image_shape[1]:
            raise ConfigurationError(f"area budget delta={self.delta} must be below the image area")
        if self.tv_weight < 0:
            raise ConfigurationError("tv_weight must be non-negative")
        if self.penalty_initial <= 0 or self.penalty_factor < 1.0 or self.penalty_every < 1:
            raise ConfigurationError("penalty schedule needs initial > 0, factor >= 1, every >= 1")
        if self.penalty_scale is not None and self.penalty_scale <= 0:
            raise ConfigurationError("penalty_scale must be positive")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigurationError(f"mask threshold must lie in (0,1): {self.threshold}")

    @property
    def scale(self) -> float:
        return float(self.penalty_scale) if self.penalty_scale is not None else self.delta


@dataclass(frozen=True)
class PenaltySchedule:
    """rho for the area constraint: ``initial * factor ** (epoch // every)``."""

    initial: float = 1.0
    factor: float = 2.0
    every: int = 200

    @classmethod
    def from_constraints(cls, cfg: ConstraintConfig) -> "PenaltySchedule":
        return cls(cfg.penalty_initial, cfg.penalty_factor, cfg.penalty_every)

    def weight(self, epoch: int) -> float:
        return self.initial * self.factor ** (max(epoch, 0) // self.every)


@dataclass
class LossBreakdown:
    """Per-image raw terms, normalized terms and the batch-mean total."""

    score_original: torch.Tensor
    score_marginalized: torch.Tensor
    phi_raw: torch.Tensor
    psi_raw: torch.Tensor
    tv_raw: torch.Tensor
    area: torch.Tensor
    phi: torch.Tensor
    psi: torch.Tensor
    tv: torch.Tensor
    constraint: torch.Tensor
    penalty_weight: float
    total: torch.Tensor

    def as_dict(self) -> Dict[str, float]:
        return {
            'total': float(self.total),
            'phi': float(self.phi.mean()),
            'psi': float(self.psi.mean()),
            'tv': float(self.tv.mean()),
            'constraint': float(self.constraint.mean()),
            'area': float(self.area.mean()),
            'score_marginalized': float(self.score_marginalized.mean()),
            'penalty_weight': self.penalty_weight,
        }


def generalized_logistic(x: torch.Tensor, k: float = 1.0, x0: float = 0.0) -> torch.Tensor:
    """1 / (1 + exp(-k (x - x0)))."""
    return torch.sigmoid(k * (x - x0))


def log_odds(p: torch.Tensor) -> torch.Tensor:
    return torch.log(p) - torch.log1p(-p)


def edge_weights(image: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """exp(-|grad I| / mean |grad I|) on horizontal and vertical neighbor pairs (per image)."""
    gx = (image[..., :, 1:] - image[..., :, :-1]).abs()
    gy = (image[..., 1:, :] - image[..., :-1, :]).abs()
    count = gx[0].numel() + gy[0].numel()
    mean = (gx.flatten(1).sum(1) + gy.flatten(1).sum(1)) / count
    mean = torch.where(mean > 0, mean, torch.ones_like(mean)).view(-1, 1, 1, 1)
    return torch.exp(-gx / mean), torch.exp(-gy / mean)


def weighted_tv(soft_mask: torch.Tensor, image: torch.Tensor) -> torch.Tensor:
    """Edge-weighted anisotropic total variation per image, averaged over pixels.

    Mask edges along image edges are cheap, mask edges in flat regions are expensive.
    """
    with torch.no_grad():
        wx, wy = edge_weights(image)
    dx = (soft_mask[..., :, 1:] - soft_mask[..., :, :-1]).abs()
    dy = (soft_mask[..., 1:, :] - soft_mask[..., :-1, :]).abs()
    pixels = soft_mask[0].numel()
    return ((wx * dx).flatten(1).sum(1) + (wy * dy).flatten(1).sum(1)) / pixels


def hole_from_soft(soft_mask: torch.Tensor, t: float, straight_through: bool = True) -> torch.Tensor:
    """Hole fed to the composite.

    Straight-through: forward value is ``soft >= t``, backward is the identity.
    Relaxed: the soft mask itself.
    """
    if not straight_through:
        return soft_mask
    hard = (soft_mask >= t).to(soft_mask.dtype)
    return hard + (soft_mask - soft_mask.detach())


def marginalize(image: torch.Tensor, soft_mask: torch.Tensor, inpainter: InpainterModel, t: float = 0.55,
                straight_through: bool = True) -> torch.Tensor:
    """pi(M): inpaint the thresholded hole; gradients reach ``soft_mask`` through the composite."""
    if image.shape != soft_mask.shape:
        raise ContractError(f"soft_mask {tuple(soft_mask.shape)} does not match image {tuple(image.shape)}")
    hard = (soft_mask.detach() >= t).to(image.dtype)
    prediction = inpainter(image, 1.0 - hard)
    return composite(image, hole_from_soft(soft_mask, t, straight_through), prediction)


def attribution_loss(image: torch.Tensor, soft_mask: torch.Tensor, scorer: ScorerModel,
                     inpainter: InpainterModel, cfg: ConstraintConfig, epoch: int = 0,
                     score_original: Optional[torch.Tensor] = None) -> LossBreakdown:
    """
    Loss for a batch (N,1,H,W) of images and soft masks.

    ``score_original`` may be passed when the caller already holds p(c|I)
    (the attributor computes it from its own feature pass); it is treated as
    a constant either way.
    """
    eps = cfg.epsilon
    if score_original is None:
        score_original = scorer(image)
    s0 = score_original.detach().clamp(eps, 1.0 - eps)

    counterfactual = marginalize(image, soft_mask, inpainter, cfg.threshold, cfg.straight_through)
    s1 = scorer(counterfactual).clamp(eps, 1.0 - eps)

    phi_raw = -torch.log1p(-s1)
    psi_raw = log_odds(s0) - log_odds(s1)
    tv_raw = weighted_tv(soft_mask, image)
    area = soft_mask.flatten(1).sum(1)

    phi = generalized_logistic(phi_raw, *cfg.logistic['phi'])
    psi = generalized_logistic(-psi_raw, *cfg.logistic['psi'])
    tv = generalized_logistic(tv_raw, *cfg.logistic['tv'])

    rho = PenaltySchedule.from_constraints(cfg).weight(epoch)
    excess = torch.relu(area - cfg.delta) / cfg.scale
    constraint = rho * excess ** 2

    total = (phi + psi + cfg.tv_weight * tv + constraint).mean()
    return LossBreakdown(
        score_original=s0,
        score_marginalized=s1,
        phi_raw=phi_raw,
        psi_raw=psi_raw,
        tv_raw=tv_raw,
        area=area,
        phi=phi,
        psi=psi,
        tv=tv,
        constraint=constraint,
        penalty_weight=rho,
        total=total,
    )
