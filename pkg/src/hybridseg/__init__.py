"""Hybrid transformer-CNN binary segmentation pipeline.

A hierarchical shifted-window encoder feeds a convolutional fusion
decoder; training combines binary cross-entropy with a soft IoU term and
monitors Dice with patience-based early stopping. See the README for the
CLI and the acceptance test suite.
"""
from .config import ModelConfig, TrainConfig
from .decoder import (Decoder, DecoderBlock, DecoderState, HybridSegModel,
                      SegmentationHead, restore_resolution)
from .encoder import (FeatureMap, FeaturePyramid, PatchEmbed, PatchMerging,
                      SwinBlock, SwinEncoder, WindowAttention, WindowSet,
                      window_partition, window_reverse)
from .losses import LossValue, bce_loss, combined_loss, soft_iou_loss
from .metrics import (ConfusionCounts, FpsReport, MetricReport,
                      aggregate_report, compute_metrics, confusion_counts,
                      fps_benchmark)
from .training import (EarlyStopping, EvaluationResult, TrainResult, evaluate,
                       train)
from .checkpoint import CheckpointRecord, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "ModelConfig", "TrainConfig",
    "FeatureMap", "FeaturePyramid", "WindowSet",
    "PatchEmbed", "PatchMerging", "SwinBlock", "SwinEncoder", "WindowAttention",
    "window_partition", "window_reverse",
    "Decoder", "DecoderBlock", "DecoderState", "HybridSegModel",
    "SegmentationHead", "restore_resolution",
    "LossValue", "bce_loss", "soft_iou_loss", "combined_loss",
    "ConfusionCounts", "MetricReport", "FpsReport",
    "confusion_counts", "compute_metrics", "aggregate_report", "fps_benchmark",
    "EarlyStopping", "EvaluationResult", "TrainResult", "evaluate", "train",
    "CheckpointRecord", "save_checkpoint", "load_checkpoint",
    "__version__",
]
