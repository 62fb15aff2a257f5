"""Small convolutional scorer f estimating p(c|I), with a four-scale feature pyramid."""

from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Tuple

import torch
import torch.nn as nn

from src.utils.errors import ConfigurationError, ContractError

ACTIVATIONS = {
    'relu': nn.ReLU,
    'elu': nn.ELU,
}


@dataclass
class FeaturePyramid:
    """Post-activation feature grids at 1/2, 1/4, 1/8 and 1/16 of the input size."""

    levels: List[torch.Tensor]

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, index: int) -> torch.Tensor:
        return self.levels[index]

    @property
    def deepest(self) -> torch.Tensor:
        return self.levels[-1]

    @property
    def shapes(self) -> List[Tuple[int, ...]]:
        return [tuple(level.shape) for level in self.levels]


class ScorerModel(nn.Module):
    """Four stride-2 conv stages (conv, batch norm, activation), global pooling and an affine head.

    Feature taps sit right after each stage's activation. ``feature_calls`` counts
    feature extractions so callers can assert single-pass behavior.
    """

    def __init__(self, input_size: Sequence[int] = (64, 64), widths: Sequence[int] = (16, 32, 64, 128),
                 activation: str = 'relu', threshold: float = 0.5):
        super().__init__()
        if len(widths) != 4:
            raise ConfigurationError(f"ScorerModel needs exactly 4 stage widths, got {list(widths)}")
        if activation not in ACTIVATIONS:
            raise ConfigurationError(f"Unknown activation '{activation}'")
        h, w = input_size
        if h % 16 or w % 16:
            raise ConfigurationError(f"Input size {tuple(input_size)} must be divisible by 16")

        self.input_size = (int(h), int(w))
        self.widths = tuple(int(c) for c in widths)
        self.activation = activation
        self.threshold = float(threshold)
        self.feature_calls = 0

        stages = []
        in_ch = 1
        for out_ch in self.widths:
            stages.append(nn.Sequential(
                nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=2, padding=1, bias=False),
                nn.BatchNorm2d(out_ch),
                ACTIVATIONS[activation](),
            ))
            in_ch = out_ch
        self.stages = nn.ModuleList(stages)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(self.widths[-1], 1)

    def descriptor(self) -> Dict[str, Any]:
        """Architecture descriptor stored in model archives."""
        return {
            'kind': 'scorer',
            'input_size': list(self.input_size),
            'widths': list(self.widths),
            'activation': self.activation,
        }

    @classmethod
    def from_descriptor(cls, descriptor: Dict[str, Any], threshold: float = 0.5) -> "ScorerModel":
        return cls(input_size=descriptor['input_size'], widths=descriptor['widths'],
                   activation=descriptor['activation'], threshold=threshold)

    def _check(self, image: torch.Tensor) -> torch.Tensor:
        if image.dim() == 2:
            image = image[None, None]
        elif image.dim() == 3:
            image = image[:, None]
        if image.dim() != 4 or image.shape[1] != 1 or tuple(image.shape[-2:]) != self.input_size:
            raise ContractError(
                f"Expected image of size {self.input_size} (single channel), got {tuple(image.shape)}"
            )
        return image

    def features(self, image: torch.Tensor) -> FeaturePyramid:
        """Feature pyramid for a batch (N,1,H,W), a stack (N,H,W) or one image (H,W)."""
        x = self._check(image)
        self.feature_calls += 1
        levels = []
        for stage in self.stages:
            x = stage(x)
            levels.append(x)
        return FeaturePyramid(levels)

    def head_logit(self, deepest: torch.Tensor) -> torch.Tensor:
        return self.head(self.pool(deepest).flatten(1)).squeeze(1)

    def head_score(self, deepest: torch.Tensor) -> torch.Tensor:
        """p(c|I) from the deepest feature grid; ``score`` is defined through this."""
        return torch.sigmoid(self.head_logit(deepest))

    def logit(self, image: torch.Tensor) -> torch.Tensor:
        return self.head_logit(self.features(image).deepest)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        return self.head_score(self.features(image).deepest)

    def zero_head(self) -> "ScorerModel":
        """Zero the affine head so every image scores exactly 0.5."""
        with torch.no_grad():
            self.head.weight.zero_()
            self.head.bias.zero_()
        return self

    def freeze(self) -> "ScorerModel":
        """Evaluation mode with gradients disabled for every parameter."""
        self.eval()
        for param in self.parameters():
            param.requires_grad_(False)
        return self


def score(model: ScorerModel, image: torch.Tensor) -> torch.Tensor:
    """p(c|I) in (0,1); differentiable with respect to the pixels."""
    return model(image)


def features(model: ScorerModel, image: torch.Tensor) -> FeaturePyramid:
    return model.features(image)
