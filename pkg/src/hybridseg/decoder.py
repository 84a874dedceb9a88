"""Convolutional fusion decoder and full segmentation model.

The decoder walks the pyramid coarse-to-fine: each block is conv3x3 ->
BatchNorm -> ReLU -> bilinear 2x upsample, and each finer level first
concatenates the upsampled stream with the matching encoder skip. A 1x1
head maps the 64-channel half-resolution stream to per-class logits,
which a final bilinear resize restores to the input resolution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from .config import ModelConfig
from .encoder import FeatureMap, FeaturePyramid, SwinEncoder
from .exceptions import DimensionError


@dataclass(frozen=True)
class DecoderState:
    """The four decoder maps, coarse (d4) to fine (d1)."""

    d4: FeatureMap
    d3: FeatureMap
    d2: FeatureMap
    d1: FeatureMap


class DecoderBlock(nn.Module):
    """conv3x3 + BN + ReLU, then bilinear 2x upsample (half-pixel centers).

    ReLU runs before the interpolation, so outputs stay non-negative.
    """

    def __init__(self, in_channels: int, out_channels: int) -> None:
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, kernel_size=3, padding=1)
        self.bn = nn.BatchNorm2d(out_channels, eps=1e-5, momentum=0.1)
        self.relu = nn.ReLU(inplace=True)

    def forward(self, x: Tensor) -> Tensor:
        x = self.relu(self.bn(self.conv(x)))
        return F.interpolate(x, scale_factor=2.0, mode="bilinear", align_corners=False)


class SegmentationHead(nn.Module):
    """Per-pixel linear map from decoder features to K class logits (1x1 conv)."""

    def __init__(self, in_channels: int, num_classes: int) -> None:
        super().__init__()
        self.conv = nn.Conv2d(in_channels, num_classes, kernel_size=1)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(x)


def restore_resolution(logits: Tensor, size: tuple[int, int]) -> Tensor:
    """Bilinear-resize a logit map to ``size`` (the original input resolution)."""
    return F.interpolate(logits, size=size, mode="bilinear", align_corners=False)


class Decoder(nn.Module):
    """Skip-concat cascade over the feature pyramid: D4 .. D1."""

    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        enc = cfg.stage_channels
        w1, w2, w3, w4 = cfg.decoder_widths
        self.block4 = DecoderBlock(enc[3], w4)
        self.block3 = DecoderBlock(w4 + enc[2], w3)
        self.block2 = DecoderBlock(w3 + enc[1], w2)
        self.block1 = DecoderBlock(w2 + enc[0], w1)

    @staticmethod
    def _concat_skip(up: Tensor, skip: Tensor, level: int) -> Tensor:
        if up.shape[-2:] != skip.shape[-2:]:
            raise DimensionError(
                f"decoder level {level}: upsampled size {tuple(up.shape[-2:])} does not "
                f"match skip size {tuple(skip.shape[-2:])}; broken upsample chain")
        return torch.cat([up, skip], dim=1)

    def forward(self, pyramid: FeaturePyramid) -> DecoderState:
        f1, f2, f3, f4 = (m.data for m in pyramid.maps())
        d4 = self.block4(f4)
        d3 = self.block3(self._concat_skip(d4, f3, level=3))
        d2 = self.block2(self._concat_skip(d3, f2, level=2))
        d1 = self.block1(self._concat_skip(d2, f1, level=1))
        return DecoderState(
            d4=FeatureMap(d4, stage=4), d3=FeatureMap(d3, stage=3),
            d2=FeatureMap(d2, stage=2), d1=FeatureMap(d1, stage=1))


def _init_decoder_weights(module: nn.Module) -> None:
    if isinstance(module, nn.Conv2d):
        fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
        nn.init.normal_(module.weight, std=math.sqrt(1.0 / fan_in))
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.BatchNorm2d):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


class HybridSegModel(nn.Module):
    """Encoder + decoder + head; forward maps (B, 3, H, W) to (B, K, H, W) logits.

    Evaluation-mode forwards are deterministic for fixed weights; frozen
    weights make inference reentrant.
    """

    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.cfg = cfg
        self.encoder = SwinEncoder(cfg)
        self.decoder = Decoder(cfg)
        self.head = SegmentationHead(cfg.decoder_widths[0], cfg.num_classes)
        self.decoder.apply(_init_decoder_weights)
        self.head.apply(_init_decoder_weights)

    def forward(self, x: Tensor) -> Tensor:
        h, w = x.shape[-2:]
        pyramid = self.encoder(x)
        state = self.decoder(pyramid)
        logits = self.head(state.d1.data)
        return restore_resolution(logits, (h, w))
