"""Binary-mask evaluation metrics and the inference-throughput benchmark.

Metrics are defined on exact pixel confusion counts:

    IoU = TP / (TP + FP + FN)          DSC = 2*TP / (2*TP + FP + FN)
    Precision = TP / (TP + FP)         Recall = TP / (TP + FN)
    Accuracy = (TP + TN) / total       F1 = 2PR / (P + R)
    F2 = 5PR / (4P + R)

Zero-denominator convention: a ratio whose denominator is empty counts as
vacuous success (1.0); F1/F2 fall back to 0.0 when P = R = 0, which keeps
F1 identical to DSC for every count tuple.
"""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import torch
from torch import Tensor

from .exceptions import DimensionError, UsageError

PER_IMAGE_MEAN = "per-image-mean"
GLOBAL_COUNTS = "global-counts"

METRIC_FIELDS = ("iou", "dsc", "precision", "recall", "accuracy", "f1", "f2")
METRIC_CSV_COLUMNS = ("image_id",) + METRIC_FIELDS


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise UsageError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)


@dataclass(frozen=True)
class MetricReport:
    iou: float
    dsc: float
    precision: float
    recall: float
    accuracy: float
    f1: float
    f2: float
    n_images: int = 1
    aggregation: str = GLOBAL_COUNTS
    fps: float | None = None

    def with_fps(self, fps: float) -> "MetricReport":
        return replace(self, fps=fps)


def confusion_counts(pred: Tensor, gt: Tensor, threshold: float = 0.5) -> ConfusionCounts:
    """Pixel confusion counts between a prediction and a binary ground truth.

    Floating-point ``pred`` is read as logits and thresholded on its
    sigmoid (strict >, so p == threshold predicts background); integer or
    boolean ``pred`` is taken as an already-binary mask.
    """
    if pred.shape != gt.shape:
        raise DimensionError(
            f"pred shape {tuple(pred.shape)} does not match gt shape {tuple(gt.shape)}")
    if not 0 < threshold < 1:
        raise UsageError(f"threshold {threshold} must be in (0, 1)")
    gt_b = gt.bool()
    if not ((gt == 0) | (gt == 1)).all():
        raise UsageError("ground-truth mask must be binary {0, 1}")
    if pred.is_floating_point():
        pred_b = torch.sigmoid(pred) > threshold
    else:
        pred_b = pred.bool()
    tp = int((pred_b & gt_b).sum())
    fp = int((pred_b & ~gt_b).sum())
    fn = int((~pred_b & gt_b).sum())
    tn = int((~pred_b & ~gt_b).sum())
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def _ratio(num: int, den: int) -> float:
    return num / den if den > 0 else 1.0


def compute_metrics(c: ConfusionCounts) -> MetricReport:
    """Evaluate all metrics for one count tuple (one image, usually)."""
    precision = _ratio(c.tp, c.tp + c.fp)
    recall = _ratio(c.tp, c.tp + c.fn)
    pr_sum = precision + recall
    f1 = 2.0 * precision * recall / pr_sum if pr_sum > 0 else 0.0
    f2_den = 4.0 * precision + recall
    f2 = 5.0 * precision * recall / f2_den if f2_den > 0 else 0.0
    return MetricReport(
        iou=_ratio(c.tp, c.tp + c.fp + c.fn),
        dsc=_ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn),
        precision=precision,
        recall=recall,
        accuracy=_ratio(c.tp + c.tn, c.total),
        f1=f1,
        f2=f2,
    )


def aggregate_report(reports: Sequence[MetricReport],
                     counts: Sequence[ConfusionCounts],
                     mode: str = PER_IMAGE_MEAN) -> MetricReport:
    """Combine per-image results over a dataset.

    ``per-image-mean`` averages each metric across images (the usual
    mDice/mIoU reading); ``global-counts`` pools the confusion counts
    first and evaluates the metrics once.
    """
    if mode == PER_IMAGE_MEAN:
        if not reports:
            raise UsageError("cannot aggregate an empty report list")
        mean = {f: statistics.fmean(getattr(r, f) for r in reports)
                for f in METRIC_FIELDS}
        return MetricReport(**mean, n_images=len(reports), aggregation=mode)
    if mode == GLOBAL_COUNTS:
        if not counts:
            raise UsageError("cannot aggregate an empty counts list")
        pooled = counts[0]
        for c in counts[1:]:
            pooled = pooled + c
        return replace(compute_metrics(pooled), n_images=len(counts), aggregation=mode)
    raise UsageError(f"unknown aggregation mode {mode!r}")


@dataclass(frozen=True)
class FpsReport:
    fps: float
    mean_latency: float
    std_latency: float
    n_frames: int
    n_warmup: int


def fps_benchmark(model: Callable[[Tensor], object], input_size: tuple[int, int],
                  n_frames: int, n_warmup: int = 10,
                  make_input: Callable[[], Tensor] | None = None) -> FpsReport:
    """Throughput of single-image forwards: n_frames / wall time (warmup excluded).

    Frames run sequentially on one evaluation context so the timings stay
    meaningful. A forward failure is re-raised with the frame index.
    """
    if n_frames < 1:
        raise UsageError("n_frames must be >= 1")
    if n_warmup < 0:
        raise UsageError("n_warmup must be >= 0")
    if make_input is None:
        h, w = input_size
        frame = torch.randn(1, 3, h, w)
        make_input = lambda: frame  # noqa: E731
    latencies: list[float] = []
    with torch.no_grad():
        for i in range(n_warmup):
            try:
                model(make_input())
            except Exception as exc:
                raise RuntimeError(f"model forward failed at warmup frame {i}") from exc
        t_start = time.perf_counter()
        for i in range(n_frames):
            t0 = time.perf_counter()
            try:
                model(make_input())
            except Exception as exc:
                raise RuntimeError(f"model forward failed at frame {i}") from exc
            latencies.append(time.perf_counter() - t0)
        elapsed = time.perf_counter() - t_start
    return FpsReport(
        fps=n_frames / elapsed,
        mean_latency=statistics.fmean(latencies),
        std_latency=statistics.stdev(latencies) if n_frames > 1 else 0.0,
        n_frames=n_frames,
        n_warmup=n_warmup,
    )


def write_metrics_csv(path, per_image: Sequence[tuple[str, MetricReport]],
                      aggregate: MetricReport | None = None) -> None:
    """One row per image plus an aggregate row, in the fixed column order."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_CSV_COLUMNS)
        for image_id, report in per_image:
            writer.writerow([image_id] + [f"{getattr(report, f):.6f}" for f in METRIC_FIELDS])
        if aggregate is not None:
            writer.writerow([f"aggregate({aggregate.aggregation})"]
                            + [f"{getattr(aggregate, f):.6f}" for f in METRIC_FIELDS])


def format_metrics_text(report: MetricReport, title: str = "metrics") -> str:
    """Plain-text rendering with the same fields as the CSV."""
    lines = [f"[{title}]"]
    for f in METRIC_FIELDS:
        lines.append(f"{f}: {getattr(report, f):.6f}")
    lines.append(f"n_images: {report.n_images}")
    lines.append(f"aggregation: {report.aggregation}")
    if report.fps is not None:
        lines.append(f"fps: {report.fps:.3f}")
    return "\n".join(lines)
