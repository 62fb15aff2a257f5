"""Partial convolution: convolution renormalized over valid inputs, with mask update."""

from typing import Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from src.utils.errors import ContractError


class PartialConv2d(nn.Module):
    """Partial convolution layer.

    ``mask`` is 1 for valid inputs and 0 for holes, either one channel shared by all
    feature channels or one channel per feature channel. Zero padding counts toward
    the renormalization denominator as valid data, so an all-ones mask reproduces a
    standard zero-padded convolution; a window whose in-image inputs are all holes
    still outputs zero and stays a hole.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int = 1, padding: int = None, bias: bool = True):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding
        self.input_conv = nn.Conv2d(in_channels, out_channels, kernel_size, stride, padding=0, bias=False)
        self.bias = nn.Parameter(torch.zeros(out_channels)) if bias else None

    @property
    def weight(self) -> torch.Tensor:
        return self.input_conv.weight

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        if mask.shape[-2:] != x.shape[-2:] or mask.shape[0] != x.shape[0]:
            raise ContractError(f"Mask {tuple(mask.shape)} not aligned with features {tuple(x.shape)}")
        mask_channels = mask.shape[1]
        if mask_channels not in (1, x.shape[1]):
            raise ContractError(f"Mask needs 1 or {x.shape[1]} channels, got {mask_channels}")

        p = self.padding
        k = self.kernel_size
        raw = self.input_conv(F.pad(x * mask, (p, p, p, p)))

        ones = torch.ones(1, mask_channels, k, k, dtype=mask.dtype, device=mask.device)
        valid_sum = F.conv2d(F.pad(mask, (p, p, p, p)), ones, stride=self.stride)
        padding_sum = F.conv2d(F.pad(torch.zeros_like(mask), (p, p, p, p), value=1.0), ones, stride=self.stride)
        window = float(k * k * mask_channels)

        has_valid = valid_sum > 0
        denom = torch.where(has_valid, valid_sum + padding_sum, torch.ones_like(valid_sum))
        out = raw * (window / denom)
        if self.bias is not None:
            out = out + self.bias.view(1, -1, 1, 1)
        out = torch.where(has_valid, out, torch.zeros_like(out))
        new_mask = torch.clamp(valid_sum, 0.0, 1.0)
        return out, new_mask


def partial_conv(features: torch.Tensor, mask: torch.Tensor,
                 layer: PartialConv2d) -> Tuple[torch.Tensor, torch.Tensor]:
    """output(y) = W^T(X_y * M_y) * |window| / sum(M_y) + b where sum(M_y) > 0, else 0."""
    return layer(features, mask)
