"""Baseline explanations: gradient saliency and last-layer CAM."""

import torch
import torch.nn.functional as F

from src.nets.scorer import ScorerModel


def _as_batch(image: torch.Tensor) -> torch.Tensor:
    if image.dim() == 2:
        return image[None, None]
    if image.dim() == 3:
        return image[:, None]
    return image


def _max_normalize(maps: torch.Tensor) -> torch.Tensor:
    peak = maps.flatten(1).max(dim=1).values.view(-1, 1, 1, 1)
    return torch.where(peak > 0, maps / torch.where(peak > 0, peak, torch.ones_like(peak)), torch.zeros_like(maps))


def saliency(model: ScorerModel, image: torch.Tensor) -> torch.Tensor:
    """|d score / d pixel|, max-normalized per image to [0,1]."""
    squeeze = image.dim() == 2
    out = _max_normalize(score_gradient(model, image).abs())
    return out[0, 0] if squeeze else out


def score_gradient(model: ScorerModel, image: torch.Tensor) -> torch.Tensor:
    """Unnormalized d score / d pixel (what saliency rescales)."""
    x = _as_batch(image).detach().clone().requires_grad_(True)
    with torch.enable_grad():
        grad, = torch.autograd.grad(model(x).sum(), x)
    return grad


def cam(model: ScorerModel, image: torch.Tensor) -> torch.Tensor:
    """Gradient-weighted sum of the deepest feature maps, rectified, bilinearly
    upsampled to input size and max-normalized."""
    squeeze = image.dim() == 2
    x = _as_batch(image).detach()
    with torch.enable_grad():
        deepest = model.features(x).deepest.detach().requires_grad_(True)
        logit = model.head_logit(deepest)
        grad, = torch.autograd.grad(logit.sum(), deepest)
    weights = grad.mean(dim=(2, 3), keepdim=True)
    heat = F.relu((weights * deepest.detach()).sum(dim=1, keepdim=True))
    heat = F.interpolate(heat, size=x.shape[-2:], mode='bilinear', align_corners=False)
    out = _max_normalize(heat)
    return out[0, 0] if squeeze else out
