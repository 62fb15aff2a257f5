"""Partial-convolution U-Net implementing the marginalization function pi(M)."""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from src.nets.partial_conv import PartialConv2d
from src.utils.errors import ConfigurationError, ContractError

logger = logging.getLogger(__name__)

PHASE_FULL_BN = 1
PHASE_DECODER_BN = 2


@dataclass(frozen=True)
class InpainterConfig:
    depths: Tuple[int, ...] = (32, 64, 128, 256, 256)
    kernel_sizes: Tuple[int, ...] = (7, 5, 5, 3, 3)

    def validate(self, input_size: Sequence[int]) -> None:
        if len(self.depths) != len(self.kernel_sizes) or not self.depths:
            raise ConfigurationError("inpainter depths and kernel_sizes must be non-empty and of equal length")
        bottleneck = min(input_size) // (2 ** len(self.depths))
        if bottleneck < 2:
            raise ConfigurationError(
                f"{len(self.depths)} contraction blocks collapse a {tuple(input_size)} input below 2x2"
            )


class PConvBlock(nn.Module):
    """Partial convolution, batch norm, activation."""

    def __init__(self, in_ch: int, out_ch: int, kernel_size: int, stride: int, activation: nn.Module,
                 batch_norm: bool = True):
        super().__init__()
        self.pconv = PartialConv2d(in_ch, out_ch, kernel_size, stride=stride, bias=not batch_norm)
        self.bn = nn.BatchNorm2d(out_ch) if batch_norm else None
        self.act = activation

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        x, mask = self.pconv(x, mask)
        if self.bn is not None:
            x = self.bn(x)
        if self.act is not None:
            x = self.act(x)
        return x, mask


class InpainterModel(nn.Module):
    """Contraction path of stride-2 partial-conv blocks (ReLU), mirrored expansion path
    (nearest x2 upsampling, kernel 3, LeakyReLU 0.2) with skip connections on features
    and masks, and a final partial conv back to one channel.

    ``phase`` 1 trains batch norm everywhere; phase 2 freezes contraction-path batch
    norm so it only adapts in the expansion path.
    """

    def __init__(self, input_size: Sequence[int] = (64, 64), depths: Sequence[int] = (32, 64, 128, 256, 256),
                 kernel_sizes: Sequence[int] = (7, 5, 5, 3, 3)):
        super().__init__()
        cfg = InpainterConfig(tuple(depths), tuple(kernel_sizes))
        cfg.validate(input_size)
        self.input_size = (int(input_size[0]), int(input_size[1]))
        self.depths = tuple(int(d) for d in depths)
        self.kernel_sizes = tuple(int(k) for k in kernel_sizes)
        self.phase = PHASE_FULL_BN

        encoders = []
        in_ch = 1
        for depth, k in zip(self.depths, self.kernel_sizes):
            encoders.append(PConvBlock(in_ch, depth, k, stride=2, activation=nn.ReLU()))
            in_ch = depth
        self.encoders = nn.ModuleList(encoders)

        # Skip channels seen by each decoder block, deepest first
        skip_channels = [1] + list(self.depths[:-1])
        decoders = []
        for i in reversed(range(len(self.depths))):
            skip = skip_channels[i]
            if i == 0:
                decoders.append(PConvBlock(in_ch + skip, 1, 3, stride=1, activation=None, batch_norm=False))
            else:
                decoders.append(PConvBlock(in_ch + skip, skip, 3, stride=1, activation=nn.LeakyReLU(0.2)))
                in_ch = skip
        self.decoders = nn.ModuleList(decoders)

    def descriptor(self) -> Dict[str, Any]:
        return {
            'kind': 'inpainter',
            'input_size': list(self.input_size),
            'depths': list(self.depths),
            'kernel_sizes': list(self.kernel_sizes),
        }

    @classmethod
    def from_descriptor(cls, descriptor: Dict[str, Any]) -> "InpainterModel":
        return cls(input_size=descriptor['input_size'], depths=descriptor['depths'],
                   kernel_sizes=descriptor['kernel_sizes'])

    def set_phase(self, phase: int) -> "InpainterModel":
        if phase not in (PHASE_FULL_BN, PHASE_DECODER_BN):
            raise ConfigurationError(f"Unknown inpainter phase: {phase}")
        self.phase = phase
        for block in self.encoders:
            for param in block.bn.parameters():
                param.requires_grad_(phase == PHASE_FULL_BN)
        self.train(self.training)
        return self

    def train(self, mode: bool = True) -> "InpainterModel":
        super().train(mode)
        if mode and self.phase == PHASE_DECODER_BN:
            for block in self.encoders:
                block.bn.eval()
        return self

    def forward(self, image: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
        """Raw network output for ``image`` with holes where ``valid`` is 0."""
        x, m = image * valid, valid
        skips: List[Tuple[torch.Tensor, torch.Tensor]] = [(x, m)]
        for block in self.encoders:
            x, m = block(x, m)
            skips.append((x, m))
        skips.pop()

        for block in self.decoders:
            skip_x, skip_m = skips.pop()
            x = F.interpolate(x, scale_factor=2, mode='nearest')
            m = F.interpolate(m, scale_factor=2, mode='nearest')
            merged_x = torch.cat([x, skip_x], dim=1)
            merged_m = torch.cat([m.expand(-1, x.shape[1], -1, -1), skip_m.expand(-1, skip_x.shape[1], -1, -1)], dim=1)
            x, m = block(merged_x, merged_m)
        return x

    def freeze(self) -> "InpainterModel":
        self.eval()
        for param in self.parameters():
            param.requires_grad_(False)
        return self


def composite(image: torch.Tensor, hole: torch.Tensor, prediction: torch.Tensor) -> torch.Tensor:
    """Input pixels outside the hole, clamped prediction inside.

    Written as ``image + hole * (pred - image)`` so pixels with hole == 0 are copied
    bit for bit while a soft or straight-through hole keeps its gradient.
    """
    return image + hole * (prediction.clamp(0.0, 1.0) - image)


def inpaint(model: InpainterModel, image: torch.Tensor, hole_mask: torch.Tensor) -> torch.Tensor:
    """Replace hole pixels (hole_mask == 1) with inpainted content."""
    squeeze = image.dim() == 2
    if squeeze:
        image, hole_mask = image[None, None], hole_mask[None, None]
    if image.shape != hole_mask.shape:
        raise ContractError(f"hole_mask {tuple(hole_mask.shape)} does not match image {tuple(image.shape)}")
    hole_mask = hole_mask.to(image.dtype)
    full = (hole_mask.flatten(1) >= 1).all(dim=1)
    if bool(full.any()):
        logger.warning(f"{int(full.sum())} image(s) fully masked; inpainting is pure hallucination")
    prediction = model(image, 1.0 - hole_mask)
    out = composite(image, hole_mask, prediction)
    return out[0, 0] if squeeze else out


def full_hole(hole_mask: torch.Tensor) -> torch.Tensor:
    """Per-image flag: the hole covers the whole image."""
    if hole_mask.dim() == 2:
        return (hole_mask >= 1).all()
    return (hole_mask.flatten(1) >= 1).all(dim=1)
