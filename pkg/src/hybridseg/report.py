"""Static report rendering: training curves and per-image metric distributions.

Consumes the history CSV written by the training loop and/or the metrics
CSV written by evaluation, and renders one plot image per tracked series
plus a plain-text summary.
"""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .exceptions import UsageError  # noqa: E402
from .metrics import METRIC_CSV_COLUMNS, METRIC_FIELDS  # noqa: E402
from .training import HISTORY_CSV_COLUMNS  # noqa: E402

HISTORY_SERIES = ("train_loss", "bce", "iou_loss", "monitor_value")


def _read_csv(path: str | Path, expected_columns: tuple[str, ...]) -> list[dict[str, str]]:
    rows: list[dict[str, str]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise UsageError(f"{path}: line 1: empty CSV, expected header "
                             f"{','.join(expected_columns)}") from None
        if tuple(header) != expected_columns:
            raise UsageError(f"{path}: line 1: header {header} does not match "
                             f"expected {list(expected_columns)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected_columns):
                raise UsageError(f"{path}: line {lineno}: expected "
                                 f"{len(expected_columns)} fields, got {len(row)}")
            rows.append(dict(zip(expected_columns, row)))
    if not rows:
        raise UsageError(f"{path}: line 2: no data rows")
    return rows


def _parse_float(path, lineno: int, name: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise UsageError(f"{path}: line {lineno}: bad {name} value {raw!r}") from None


def load_history_csv(path: str | Path) -> list[dict[str, float]]:
    rows = _read_csv(path, HISTORY_CSV_COLUMNS)
    out = []
    for i, row in enumerate(rows, start=2):
        out.append({k: _parse_float(path, i, k, v) for k, v in row.items()})
    return out


def load_metrics_csv(path: str | Path) -> tuple[list[dict], list[dict]]:
    """Returns (per-image rows, aggregate rows); values parsed to float."""
    rows = _read_csv(path, METRIC_CSV_COLUMNS)
    per_image, aggregates = [], []
    for i, row in enumerate(rows, start=2):
        parsed = {"image_id": row["image_id"]}
        for f in METRIC_FIELDS:
            parsed[f] = _parse_float(path, i, f, row[f])
        (aggregates if row["image_id"].startswith("aggregate") else per_image).append(parsed)
    return per_image, aggregates


def render_history_plots(history: list[dict[str, float]], out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    epochs = [row["epoch"] for row in history]
    written = []
    for series in HISTORY_SERIES:
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(epochs, [row[series] for row in history])
        ax.set_xlabel("epoch")
        ax.set_ylabel(series)
        ax.set_title(f"{series} vs epoch")
        ax.grid(True)
        path = out_dir / f"curve_{series}.png"
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        written.append(path)
    return written


def render_metric_distributions(per_image: list[dict], out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for field in METRIC_FIELDS:
        values = [row[field] for row in per_image]
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.hist(values, bins=20, range=(0.0, 1.0))
        ax.set_xlabel(field)
        ax.set_ylabel("images")
        ax.set_title(f"per-image {field} distribution (n={len(values)})")
        ax.grid(True)
        path = out_dir / f"dist_{field}.png"
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        written.append(path)
    return written


def summarize_metrics(per_image: list[dict], aggregates: list[dict]) -> str:
    lines = [f"images: {len(per_image)}"]
    if aggregates:
        for agg in aggregates:
            lines.append(f"{agg['image_id']}:")
            for f in METRIC_FIELDS:
                lines.append(f"  {f}: {agg[f]:.6f}")
    elif per_image:
        lines.append("mean over images:")
        for f in METRIC_FIELDS:
            mean = sum(r[f] for r in per_image) / len(per_image)
            lines.append(f"  {f}: {mean:.6f}")
    return "\n".join(lines)


def summarize_history(history: list[dict[str, float]]) -> str:
    last = history[-1]
    best = max(history, key=lambda r: r["monitor_value"])
    return "\n".join([
        f"epochs: {len(history)}",
        f"final train_loss: {last['train_loss']:.6f} "
        f"(bce {last['bce']:.6f}, iou {last['iou_loss']:.6f})",
        f"best monitor_value: {best['monitor_value']:.6f} at epoch {int(best['epoch'])}",
    ])
