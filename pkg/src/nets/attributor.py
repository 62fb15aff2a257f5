"""Attention-gated decoder over the frozen scorer's feature pyramid.

One forward pass turns an image into a soft attribution map in [0,1], projected
into the family of compact, connected masks by a Gaussian soft dilation.
"""

import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from src.nets.scorer import FeaturePyramid, ScorerModel
from src.utils.errors import ConfigurationError, ContractError

MERGE_MODES = ('concat', 'add')


@dataclass(frozen=True)
class AttributorConfig:
    threshold: float = 0.55
    sigma_rbf: float = 0.05
    smoothing: float = 30.0
    merge: str = 'concat'
    init_std: float = 0.02
    epsilon: float = 1e-8

    def validate(self) -> None:
        if not 0.0 < self.threshold < 1.0:
            raise ConfigurationError(f"threshold must lie in (0,1): {self.threshold}")
        if self.sigma_rbf <= 0 or self.smoothing <= 0:
            raise ConfigurationError("sigma_rbf and smoothing must be positive")
        if self.merge not in MERGE_MODES:
            raise ConfigurationError(f"merge must be one of {MERGE_MODES}")
        if self.epsilon <= 0:
            raise ConfigurationError("epsilon must be positive")


class AttentionGate(nn.Module):
    """x * sigmoid(W_m relu(W_l^T x + b_l) + b_m), one scalar gate per position."""

    def __init__(self, channels: int, inner_channels: Optional[int] = None):
        super().__init__()
        inner = inner_channels or max(channels // 2, 1)
        self.channels = channels
        self.W_l = nn.Conv2d(channels, inner, kernel_size=1, bias=True)
        self.W_m = nn.Conv2d(inner, 1, kernel_size=1, bias=True)

    def gate(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.channels:
            raise ContractError(f"Gate expects {self.channels} channels, got {tuple(x.shape)}")
        return torch.sigmoid(self.W_m(F.relu(self.W_l(x))))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.gate(x)


def attention_gate(gate: AttentionGate, features: torch.Tensor) -> torch.Tensor:
    return gate(features)


class DecoderBlock(nn.Module):
    """Nearest x2 upsampling, 1x1 convolution, merge with gated encoder features."""

    def __init__(self, in_channels: int, out_channels: int, merge: Optional[str]):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, kernel_size=1)
        self.merge = merge

    @property
    def out_channels(self) -> int:
        out = self.conv.out_channels
        return 2 * out if self.merge == 'concat' else out

    def forward(self, x: torch.Tensor, skip: Optional[torch.Tensor] = None) -> torch.Tensor:
        x = F.relu(self.conv(F.interpolate(x, scale_factor=2, mode='nearest')))
        if skip is None:
            return x
        if self.merge == 'concat':
            return torch.cat([x, skip], dim=1)
        return x + skip


class AttributorModel(nn.Module):
    """Frozen scorer encoder, four attention gates, four decoder blocks and a depth-two 1x1 head.

    The first three decoder blocks merge with gated features at 1/8, 1/4 and 1/2
    resolution; the fourth brings the map back to input resolution.
    """

    def __init__(self, encoder: ScorerModel, config: AttributorConfig = AttributorConfig()):
        super().__init__()
        config.validate()
        self.config = config
        self.encoder = encoder.freeze()
        widths = list(encoder.widths)

        self.gates = nn.ModuleList([AttentionGate(c) for c in widths])
        blocks = []
        in_ch = widths[-1]
        for level in (2, 1, 0):
            block = DecoderBlock(in_ch, widths[level], config.merge)
            blocks.append(block)
            in_ch = block.out_channels
        blocks.append(DecoderBlock(in_ch, widths[0], merge=None))
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Conv2d(widths[0], 2, kernel_size=1)
        self.reinitialize()

    def descriptor(self) -> Dict[str, Any]:
        return {
            'kind': 'attributor',
            'encoder': self.encoder.descriptor(),
            'threshold': self.config.threshold,
            'sigma_rbf': self.config.sigma_rbf,
            'smoothing': self.config.smoothing,
            'merge': self.config.merge,
            'init_std': self.config.init_std,
            'epsilon': self.config.epsilon,
        }

    def decoder_parameters(self) -> List[nn.Parameter]:
        return [p for name, p in self.named_parameters() if not name.startswith('encoder.')]

    def decoder_state_dict(self) -> Dict[str, torch.Tensor]:
        return {k: v for k, v in self.state_dict().items() if not k.startswith('encoder.')}

    def load_decoder_state_dict(self, state: Dict[str, torch.Tensor]) -> None:
        missing, unexpected = self.load_state_dict(state, strict=False)
        missing = [k for k in missing if not k.startswith('encoder.')]
        if missing or unexpected:
            raise ContractError(f"Decoder state mismatch: missing={missing} unexpected={unexpected}")

    def reinitialize(self, generator: Optional[torch.Generator] = None) -> "AttributorModel":
        """Random-normal weights, zero biases, for every gate/decoder/head parameter."""
        with torch.no_grad():
            for name, param in self.named_parameters():
                if name.startswith('encoder.'):
                    continue
                if name.endswith('bias'):
                    param.zero_()
                else:
                    param.copy_(torch.randn(param.shape, generator=generator, dtype=param.dtype) * self.config.init_std)
        return self

    def train(self, mode: bool = True) -> "AttributorModel":
        super().train(mode)
        self.encoder.eval()
        return self

    def raw_map(self, pyramid: FeaturePyramid) -> torch.Tensor:
        """(|c1| + eps) / (|c1| + |c2| + 2 eps) at input resolution."""
        x = self.gates[3](pyramid[3])
        for block, level in zip(self.blocks[:3], (2, 1, 0)):
            x = block(x, self.gates[level](pyramid[level]))
        x = self.blocks[3](x)
        c = self.head(x)
        c1, c2 = c[:, :1].abs(), c[:, 1:].abs()
        eps = self.config.epsilon
        return (c1 + eps) / (c1 + c2 + 2 * eps)

    def forward_with_pyramid(self, image: torch.Tensor):
        pyramid = self.encoder.features(image)
        soft = project_to_S(self.raw_map(pyramid), self.config.sigma_rbf, self.config.smoothing)
        return soft, pyramid

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        """Soft attribution map (N,1,H,W); exactly one encoder feature extraction."""
        soft, _ = self.forward_with_pyramid(image)
        return soft


def _log_kernel(sigma_px: float, dtype: torch.dtype, device) -> torch.Tensor:
    radius = max(int(math.ceil(3.0 * sigma_px)), 1)
    offsets = torch.arange(-radius, radius + 1, dtype=dtype, device=device)
    return -(offsets ** 2) / (2.0 * sigma_px ** 2)


def _log_conv1d(log_field: torch.Tensor, log_kernel: torch.Tensor, dim: int) -> torch.Tensor:
    """log sum_k exp(log_field[x + k] + log_kernel[k]) along ``dim``, outside positions excluded."""
    radius = (log_kernel.numel() - 1) // 2
    pad = (0, 0, radius, radius) if dim == 2 else (radius, radius, 0, 0)
    padded = F.pad(log_field, pad, value=float('-inf'))
    windows = padded.unfold(dim, log_kernel.numel(), 1)
    return torch.logsumexp(windows + log_kernel, dim=-1)


def gaussian_weights_log_norm(shape, sigma_px: float, dtype, device) -> torch.Tensor:
    """log of the border-truncated Gaussian mass at each position (separable)."""
    log_k = _log_kernel(sigma_px, dtype, device)
    zeros = torch.zeros((1, 1) + tuple(shape), dtype=dtype, device=device)
    return _log_conv1d(_log_conv1d(zeros, log_k, 2), log_k, 3)


def project_to_S(mask: torch.Tensor, sigma_rbf: float, a_smooth: float) -> torch.Tensor:
    """Soft dilation S(M)(x) = (1/a) log sum_y w(x-y) exp(a M(y)).

    ``w`` is a Gaussian with standard deviation ``sigma_rbf * min(H, W)`` pixels,
    truncated at 3 sigma and renormalized over the in-image positions, so a
    constant map is a fixed point. Computed as two separable log-domain passes.
    """
    if sigma_rbf <= 0 or a_smooth <= 0:
        raise ContractError("sigma_rbf and a_smooth must be positive")
    squeeze = mask.dim() == 2
    x = mask[None, None] if squeeze else mask
    h, w = x.shape[-2:]
    sigma_px = sigma_rbf * min(h, w)
    log_k = _log_kernel(sigma_px, x.dtype, x.device)
    log_field = a_smooth * x
    smoothed = _log_conv1d(_log_conv1d(log_field, log_k, 2), log_k, 3)
    out = (smoothed - gaussian_weights_log_norm((h, w), sigma_px, x.dtype, x.device)) / a_smooth
    out = out.clamp(0.0, 1.0)
    return out[0, 0] if squeeze else out


def threshold_mask(soft_mask: torch.Tensor, t: float) -> torch.Tensor:
    """Binary map: soft_mask >= t."""
    return soft_mask >= t
