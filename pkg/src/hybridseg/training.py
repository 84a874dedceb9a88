"""Optimization loop: AdamW with decoupled weight decay, BCE+IoU objective,
multi-scale inputs, metric-monitored early stopping, and best-checkpoint
retention.

All stochastic choices (shuffle order, augmentation, scale picks) derive
from (seed, epoch, image id), so a fixed seed reproduces the loss history
and a checkpoint resume walks the same trajectory as an uninterrupted run.
"""
from __future__ import annotations

import csv
import math
import random
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import torch
import torch.nn.functional as F
from torch import Tensor

from .checkpoint import (CheckpointRecord, restore_optimizer, save_checkpoint,
                         snapshot_model, snapshot_optimizer)
from .config import ModelConfig, TrainConfig
from .data import Sample, augment as augment_sample, record_seed
from .exceptions import TrainingDivergedError, UsageError
from .losses import combined_loss
from .metrics import (GLOBAL_COUNTS, PER_IMAGE_MEAN, METRIC_FIELDS,
                      ConfusionCounts, MetricReport, aggregate_report,
                      compute_metrics, confusion_counts)

HISTORY_CSV_COLUMNS = ("epoch", "train_loss", "bce", "iou_loss",
                       "monitor_value", "lr", "seconds")


class EarlyStopping:
    """Patience automaton over a maximized metric.

    An improvement is a strict increase beyond ``min_delta``; it resets
    the counter and records the best epoch. Once the counter reaches
    ``patience``, :meth:`update` returns True (stop).
    """

    def __init__(self, patience: int, min_delta: float = 1e-4) -> None:
        if patience < 1:
            raise UsageError("patience must be >= 1")
        self.patience = patience
        self.min_delta = min_delta
        self.best_value = -math.inf
        self.best_epoch = 0
        self.epochs_since_improvement = 0
        self._last_epoch: int | None = None

    def update(self, value: float, epoch: int) -> bool:
        if self._last_epoch is not None and epoch <= self._last_epoch:
            raise UsageError(
                f"epoch {epoch} arrived out of order (last was {self._last_epoch})")
        self._last_epoch = epoch
        if value > self.best_value + self.min_delta or self.best_value == -math.inf:
            self.best_value = value
            self.best_epoch = epoch
            self.epochs_since_improvement = 0
        else:
            self.epochs_since_improvement += 1
        return self.epochs_since_improvement >= self.patience


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    bce: float
    iou_loss: float
    monitor_value: float
    lr: float
    seconds: float


@dataclass
class EvaluationResult:
    per_image: list[tuple[str, MetricReport]]
    per_image_counts: list[ConfusionCounts]
    mean: MetricReport
    pooled: MetricReport


@dataclass
class TrainResult:
    best: CheckpointRecord
    last: CheckpointRecord
    history: list[EpochStats]

    @property
    def best_value(self) -> float:
        return self.best.monitored_value


def _stack_batch(samples: Sequence[Sample]) -> tuple[Tensor, Tensor]:
    images = torch.stack([s.image for s in samples])
    masks = torch.stack([s.mask for s in samples])
    return images, masks


def _rescale_batch(images: Tensor, masks: Tensor, size: int) -> tuple[Tensor, Tensor]:
    if images.shape[-2:] == (size, size):
        return images, masks
    images = F.interpolate(images, size=(size, size), mode="bilinear",
                           align_corners=False)
    masks = F.interpolate(masks, size=(size, size), mode="nearest")
    return images, masks


@torch.no_grad()
def evaluate(model: Callable[[Tensor], Tensor], data: Sequence[Sample],
             threshold: float = 0.5, batch_size: int = 8) -> EvaluationResult:
    """Per-image metrics plus both aggregations over a frozen model."""
    if len(data) == 0:
        raise UsageError("cannot evaluate an empty split")
    if isinstance(model, torch.nn.Module):
        model.eval()
    per_image: list[tuple[str, MetricReport]] = []
    per_counts: list[ConfusionCounts] = []
    for start in range(0, len(data), batch_size):
        batch = [data[i] for i in range(start, min(start + batch_size, len(data)))]
        images, masks = _stack_batch(batch)
        logits = model(images)
        for j, sample in enumerate(batch):
            c = confusion_counts(logits[j], masks[j], threshold)
            per_image.append((sample.id, compute_metrics(c)))
            per_counts.append(c)
    reports = [r for _, r in per_image]
    return EvaluationResult(
        per_image=per_image,
        per_image_counts=per_counts,
        mean=aggregate_report(reports, per_counts, PER_IMAGE_MEAN),
        pooled=aggregate_report(reports, per_counts, GLOBAL_COUNTS),
    )


def write_history_csv(path: str | Path, history: Sequence[EpochStats]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_CSV_COLUMNS)
        for s in history:
            writer.writerow([s.epoch, f"{s.train_loss:.6f}", f"{s.bce:.6f}",
                             f"{s.iou_loss:.6f}", f"{s.monitor_value:.6f}",
                             f"{s.lr:.8g}", f"{s.seconds:.3f}"])


def _epoch_order(n: int, seed: int, epoch: int) -> list[int]:
    order = list(range(n))
    random.Random(record_seed(seed, f"shuffle-{epoch}")).shuffle(order)
    return order


def make_optimizer(model: torch.nn.Module, cfg: TrainConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate,
                             betas=(0.9, 0.999), eps=1e-8,
                             weight_decay=cfg.weight_decay)


def train(model: torch.nn.Module, train_data: Sequence[Sample],
          val_data: Sequence[Sample], cfg: TrainConfig,
          model_cfg: ModelConfig | None = None,
          out_dir: str | Path | None = None,
          augment: bool = True,
          start_epoch: int = 1,
          optimizer: torch.optim.Optimizer | None = None,
          max_steps_per_epoch: int | None = None) -> TrainResult:
    """Run the training loop and keep the best checkpoint by the monitored metric.

    ``start_epoch``/``optimizer`` allow resuming from a loaded checkpoint;
    epochs are 1-indexed and the loop halts at ``cfg.max_epochs`` or when
    the patience automaton fires, whichever comes first.
    """
    if len(train_data) == 0:
        raise UsageError("training split is empty")
    if cfg.monitor not in METRIC_FIELDS:
        raise UsageError(f"monitor {cfg.monitor!r} is not one of {METRIC_FIELDS}")
    if model_cfg is None:
        model_cfg = getattr(model, "cfg", None)
    if model_cfg is None:
        raise UsageError("model_cfg is required when the model does not carry one")

    if optimizer is None:
        optimizer = make_optimizer(model, cfg)
    stopper = EarlyStopping(cfg.patience, cfg.min_delta)
    history: list[EpochStats] = []
    best: CheckpointRecord | None = None
    best_value = -math.inf
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    for epoch in range(start_epoch, cfg.max_epochs + 1):
        t_epoch = time.perf_counter()
        model.train()
        order = _epoch_order(len(train_data), cfg.seed, epoch)
        scale_rng = random.Random(record_seed(cfg.seed, f"scales-{epoch}"))
        sums = {"total": 0.0, "bce": 0.0, "iou": 0.0}
        n_batches = 0
        for step, start in enumerate(range(0, len(order), cfg.batch_size)):
            if max_steps_per_epoch is not None and step >= max_steps_per_epoch:
                break
            batch = [train_data[i] for i in order[start:start + cfg.batch_size]]
            if augment:
                batch = [augment_sample(
                    s, random.Random(record_seed(cfg.seed + epoch, s.id)))
                    for s in batch]
            images, masks = _stack_batch(batch)
            scale = scale_rng.choice(cfg.scale_set)
            images, masks = _rescale_batch(images, masks, scale)
            loss = combined_loss(model(images), masks, cfg.loss_lambda)
            if not torch.isfinite(loss.total):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} step {step}: "
                    f"total={loss.total.item()} bce={loss.bce_part.item()} "
                    f"iou={loss.iou_part.item()}")
            optimizer.zero_grad()
            loss.total.backward()
            if cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optimizer.step()
            sums["total"] += loss.total.item()
            sums["bce"] += loss.bce_part.item()
            sums["iou"] += loss.iou_part.item()
            n_batches += 1

        monitor_value = getattr(
            evaluate(model, val_data, cfg.threshold, cfg.batch_size).mean,
            cfg.monitor)
        history.append(EpochStats(
            epoch=epoch,
            train_loss=sums["total"] / max(n_batches, 1),
            bce=sums["bce"] / max(n_batches, 1),
            iou_loss=sums["iou"] / max(n_batches, 1),
            monitor_value=monitor_value,
            lr=cfg.learning_rate,
            seconds=time.perf_counter() - t_epoch,
        ))
        if monitor_value > best_value:
            best_value = monitor_value
            best = CheckpointRecord(
                model_config=model_cfg, train_config=cfg, epoch=epoch,
                monitored_value=monitor_value,
                model_state=snapshot_model(model),
                optimizer_state=snapshot_optimizer(optimizer))
        stop = stopper.update(monitor_value, epoch)
        if out_path is not None:
            write_history_csv(out_path / "history.csv", history)
            if best is not None and best.epoch == epoch:
                save_checkpoint(best, out_path / "best.ckpt")
        if stop:
            break

    assert best is not None
    last = CheckpointRecord(
        model_config=model_cfg, train_config=cfg, epoch=history[-1].epoch,
        monitored_value=history[-1].monitor_value,
        model_state=snapshot_model(model),
        optimizer_state=snapshot_optimizer(optimizer))
    if out_path is not None:
        save_checkpoint(last, out_path / "last.ckpt")
    return TrainResult(best=best, last=last, history=history)


def resume_training(record: CheckpointRecord, model: torch.nn.Module,
                    train_data: Sequence[Sample], val_data: Sequence[Sample],
                    out_dir: str | Path | None = None,
                    augment: bool = True) -> TrainResult:
    """Continue a run from a checkpoint: weights, moments, and schedule position."""
    model.load_state_dict(record.model_state)
    cfg = record.train_config
    optimizer = make_optimizer(model, cfg)
    if record.optimizer_state:
        restore_optimizer(optimizer, record.optimizer_state)
    return train(model, train_data, val_data, cfg,
                 model_cfg=record.model_config, out_dir=out_dir, augment=augment,
                 start_epoch=record.epoch + 1, optimizer=optimizer)
