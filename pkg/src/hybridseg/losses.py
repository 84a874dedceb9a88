"""Training objective: binary cross-entropy plus a differentiable IoU term.

All functions take raw logits and a {0,1} target of the same shape and
reduce over every element, so they are invariant to any simultaneous
pixel permutation of both tensors.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor

from .exceptions import DimensionError

IOU_SMOOTH = 1.0


@dataclass(frozen=True)
class LossValue:
    """total = bce_part + weight * iou_part; fields stay attached to the graph."""

    total: Tensor
    bce_part: Tensor
    iou_part: Tensor


def _check_shapes(logits: Tensor, target: Tensor) -> None:
    if logits.shape != target.shape:
        raise DimensionError(
            f"logits shape {tuple(logits.shape)} does not match "
            f"target shape {tuple(target.shape)}")


def bce_loss(logits: Tensor, target: Tensor) -> Tensor:
    """Mean per-pixel cross-entropy, computed from logits (stable for |logit| ~ 100)."""
    _check_shapes(logits, target)
    return F.binary_cross_entropy_with_logits(logits, target.to(logits.dtype))


def soft_iou_loss(logits: Tensor, target: Tensor) -> Tensor:
    """1 - (sum p*g + eps) / (sum (p + g - p*g) + eps) with p = sigmoid(logits).

    The eps = 1 smoothing makes empty-prediction/empty-target pairs score
    (near) zero loss instead of 0/0.
    """
    _check_shapes(logits, target)
    p = torch.sigmoid(logits)
    g = target.to(logits.dtype)
    intersection = (p * g).sum()
    union = (p + g - p * g).sum()
    return 1.0 - (intersection + IOU_SMOOTH) / (union + IOU_SMOOTH)


def combined_loss(logits: Tensor, target: Tensor, weight: float = 1.0) -> LossValue:
    """BCE plus ``weight`` times the soft-IoU loss, with both parts reported."""
    bce = bce_loss(logits, target)
    iou = soft_iou_loss(logits, target)
    return LossValue(total=bce + weight * iou, bce_part=bce, iou_part=iou)
