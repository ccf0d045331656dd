"""Joint-fusion residual 3D CNN for binary survival classification.

The image branch takes the four MR contrasts plus the multi-label tumor
segmentation as five input channels and runs them through three strided
residual blocks (3D convolutions with group normalization and LeakyReLU).
Adaptive max pooling flattens the final feature map, the clinical vector
(age, sex, MGMT, IDH) is concatenated, and two dropout-regularized fully
connected layers produce the two class logits. Works at any cubic input
size the three stride-2 blocks can consume; 32 voxels is the toy scale,
160 the full one.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import torch
from torch import nn


@dataclass(frozen=True)
class FusionNetConfig:
    """Architecture and optimizer settings in one place."""

    in_channels: int = 5
    block_channels: Tuple[int, int, int] = (80, 160, 320)
    fc_width: int = 512
    dropout: float = 0.5
    n_clinical: int = 4
    n_classes: int = 2
    num_groups: int = 8
    lr: float = 1e-5
    batch_size: int = 4
    scheduler_t0: int = 10
    scheduler_eta_min: float = 1e-6

    def __post_init__(self) -> None:
        if len(self.block_channels) != 3:
            raise ValueError("the image branch is three residual blocks")
        bad = [c for c in (*self.block_channels, self.fc_width) if c % self.num_groups]
        if bad:
            raise ValueError(f"channel widths {bad} are not divisible by {self.num_groups} groups")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")


class ConvBlock(nn.Module):
    """Conv3d -> GroupNorm -> LeakyReLU -> Dropout3d."""

    def __init__(self, in_channels, out_channels, kernel_size, stride, padding,
                 dropout_rate, num_groups):
        super().__init__()
        self.conv = nn.Conv3d(in_channels, out_channels, kernel_size, stride, padding)
        self.gn = nn.GroupNorm(num_groups=num_groups, num_channels=out_channels)
        self.relu = nn.LeakyReLU(negative_slope=0.1)
        self.dropout = nn.Dropout3d(dropout_rate)

    def forward(self, x):
        return self.dropout(self.relu(self.gn(self.conv(x))))


class ResBlock(nn.Module):
    """Stride-2 entry convolution plus one residual convolution at full rate."""

    def __init__(self, in_channels, out_channels, num_groups=8):
        super().__init__()
        self.conv1 = ConvBlock(in_channels, out_channels, kernel_size=3, stride=2,
                               padding=1, dropout_rate=0.0, num_groups=num_groups)
        self.conv2 = ConvBlock(out_channels, out_channels, kernel_size=3, stride=1,
                               padding=1, dropout_rate=0.0, num_groups=num_groups)

    def forward(self, x):
        x = self.conv1(x)
        return x + self.conv2(x)


class FusionNet(nn.Module):
    """Image branch, clinical concatenation, two-layer classifier head."""

    def __init__(self, cfg: FusionNetConfig = FusionNetConfig()):
        super().__init__()
        self.cfg = cfg
        c1, c2, c3 = cfg.block_channels
        self.resblock1 = ResBlock(cfg.in_channels, c1, cfg.num_groups)
        self.resblock2 = ResBlock(c1, c2, cfg.num_groups)
        self.resblock3 = ResBlock(c2, c3, cfg.num_groups)
        self.max_pool = nn.AdaptiveMaxPool3d((1, 1, 1))
        self.fc1 = nn.Linear(c3 + cfg.n_clinical, cfg.fc_width)
        self.gn1 = nn.GroupNorm(num_groups=cfg.num_groups, num_channels=cfg.fc_width)
        self.dropout1 = nn.Dropout(p=cfg.dropout)
        self.fc2 = nn.Linear(cfg.fc_width, cfg.fc_width)
        self.gn2 = nn.GroupNorm(num_groups=cfg.num_groups, num_channels=cfg.fc_width)
        self.dropout2 = nn.Dropout(p=cfg.dropout)
        self.fc3 = nn.Linear(cfg.fc_width, cfg.n_classes)
        self.relu = nn.LeakyReLU(negative_slope=0.1)

    def forward(self, image: torch.Tensor, clinical: torch.Tensor) -> torch.Tensor:
        if image.ndim != 5 or image.shape[1] != self.cfg.in_channels:
            raise ValueError(
                f"image must be (batch, {self.cfg.in_channels}, D, H, W), got {tuple(image.shape)}"
            )
        if clinical.ndim != 2 or clinical.shape[1] != self.cfg.n_clinical:
            raise ValueError(
                f"clinical must be (batch, {self.cfg.n_clinical}), got {tuple(clinical.shape)}"
            )
        if image.shape[0] != clinical.shape[0]:
            raise ValueError("image and clinical batch sizes differ")
        x = self.resblock1(image)
        x = self.resblock2(x)
        x = self.resblock3(x)
        x = self.max_pool(x).flatten(1)
        x = self.fc1(torch.cat((x, clinical), dim=1))
        x = self.dropout1(self.relu(self.gn1(x)))
        x = self.fc2(x)
        x = self.dropout2(self.relu(self.gn2(x)))
        return self.fc3(x)


def build_model(cfg: FusionNetConfig = FusionNetConfig(),
                seed: Optional[int] = None) -> FusionNet:
    """Construct a FusionNet, optionally with seeded weight initialization."""
    if seed is not None:
        torch.manual_seed(seed)
    return FusionNet(cfg)
