"""Command-line surface: train, eval, infer, bench, report, dataset-check.

Configuration precedence is flags > config file > defaults. The config
file is a flat ``key = value`` text format whose keys mirror the
ModelConfig / TrainConfig field names plus run-level paths; every command
echoes its fully resolved configuration into the output directory so a
run can be reproduced from the echo alone.

Exit codes: 0 success, 1 validation/usage failure, 2 internal error.
"""
from __future__ import annotations

import argparse
import sys
import traceback
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from . import data as data_mod
from .checkpoint import CheckpointRecord, load_checkpoint
from .config import ModelConfig, TrainConfig
from .decoder import HybridSegModel
from .exceptions import (CheckpointError, DimensionError, HybridSegError,
                         IngestionError, ParameterError, UsageError)
from .metrics import fps_benchmark, format_metrics_text, write_metrics_csv
from .training import evaluate, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INTERNAL = 2


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"cannot parse boolean from {raw!r}")


def _parse_int_tuple(raw: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in raw.replace("x", ",").split(",") if p.strip())
    except ValueError:
        raise UsageError(f"cannot parse integer list from {raw!r}") from None


def _parse_optional_str(raw: str) -> str | None:
    return raw if raw.strip() else None


# key -> (parser, default); defaults mirror the dataclass defaults
def _build_key_table() -> dict[str, tuple]:
    table: dict[str, tuple] = {}
    parsers = {
        "base_channels": int, "num_classes": int, "window_size": int,
        "stage_depths": _parse_int_tuple, "stage_heads": _parse_int_tuple,
        "mlp_ratio": float, "decoder_widths": _parse_int_tuple,
        "input_size": _parse_int_tuple, "pretrained_path": _parse_optional_str,
        "learning_rate": float, "weight_decay": float, "batch_size": int,
        "max_epochs": int, "patience": int, "min_delta": float,
        "loss_lambda": float, "scale_set": _parse_int_tuple, "seed": int,
        "monitor": str, "threshold": float, "val_fraction": float,
        "monitor_test": _parse_bool, "grad_clip": float,
    }
    for cls in (ModelConfig, TrainConfig):
        defaults = cls()
        for f in fields(cls):
            table[f.name] = (parsers[f.name], getattr(defaults, f.name))
    table.update({
        "dataset_root": (_parse_optional_str, None),
        "output_dir": (_parse_optional_str, None),
        "checkpoint": (_parse_optional_str, None),
        "train_fraction": (float, 0.9),
        "frames": (int, 100),
        "warmup": (int, 10),
        "augment": (_parse_bool, True),
        "arbitrary_rotation": (_parse_bool, False),
    })
    return table


KEY_TABLE = _build_key_table()
MODEL_KEYS = tuple(f.name for f in fields(ModelConfig))
TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig))


@dataclass
class RunConfig:
    values: dict

    @property
    def model(self) -> ModelConfig:
        return ModelConfig(**{k: self.values[k] for k in MODEL_KEYS})

    @property
    def train(self) -> TrainConfig:
        return TrainConfig(**{k: self.values[k] for k in TRAIN_KEYS})

    def __getitem__(self, key: str):
        return self.values[key]


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


def parse_config_file(path: str | Path) -> dict:
    out: dict = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise UsageError(f"{path}: line {lineno}: expected 'key = value'")
        key, _, raw = stripped.partition("=")
        key = key.strip().replace("-", "_")
        raw = raw.strip()
        if key not in KEY_TABLE:
            raise UsageError(f"{path}: line {lineno}: unknown key {key!r}")
        parser, _ = KEY_TABLE[key]
        out[key] = parser(raw)
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """defaults <- config file <- --set pairs <- dedicated flags."""
    values = {k: default for k, (_, default) in KEY_TABLE.items()}
    if getattr(args, "config", None):
        values.update(parse_config_file(args.config))
    for pair in getattr(args, "set", None) or []:
        if "=" not in pair:
            raise UsageError(f"--set expects key=value, got {pair!r}")
        key, _, raw = pair.partition("=")
        key = key.strip().replace("-", "_")
        if key not in KEY_TABLE:
            raise UsageError(f"--set: unknown key {key!r}")
        parser, _ = KEY_TABLE[key]
        values[key] = parser(raw.strip())
    flag_map = {
        "dataset_root": "dataset_root", "output_dir": "output_dir",
        "checkpoint": "checkpoint", "seed": "seed", "threshold": "threshold",
        "frames": "frames", "warmup": "warmup",
    }
    for attr, key in flag_map.items():
        flag = getattr(args, attr, None)
        if flag is not None:
            values[key] = flag
    if getattr(args, "monitor_test", False):
        values["monitor_test"] = True
    return RunConfig(values)


def write_config_echo(cfg: RunConfig, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"{key} = {_format_value(cfg.values[key])}" for key in sorted(KEY_TABLE)]
    path = out_dir / "resolved.cfg"
    path.write_text("\n".join(lines) + "\n")
    return path


def _require(cfg: RunConfig, key: str, flag: str) -> str:
    value = cfg[key]
    if not value:
        raise UsageError(f"{flag} is required for this command")
    return value


def _output_dir(cfg: RunConfig, command: str) -> Path:
    out = cfg["output_dir"] or f"runs/{command}"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_model(cfg: RunConfig) -> tuple[HybridSegModel, CheckpointRecord]:
    path = _require(cfg, "checkpoint", "--checkpoint")
    if not Path(path).is_file():
        raise UsageError(f"checkpoint {path} does not exist")
    record = load_checkpoint(path)
    model = HybridSegModel(record.model_config)
    model.load_state_dict(record.model_state)
    model.eval()
    return model, record


def _splits(cfg: RunConfig):
    root = _require(cfg, "dataset_root", "--dataset-root")
    index = data_mod.scan_dataset(root)
    train_idx, test_idx = data_mod.split_dataset(
        index, cfg["train_fraction"], cfg["seed"])
    return index, train_idx, test_idx


def cmd_train(cfg: RunConfig) -> int:
    out_dir = _output_dir(cfg, "train")
    write_config_echo(cfg, out_dir)
    _, train_idx, test_idx = _splits(cfg)
    train_cfg = cfg.train
    model_cfg = cfg.model
    if cfg["monitor_test"] or train_cfg.val_fraction == 0:
        fit_idx, val_idx = train_idx, test_idx
    else:
        fit_idx, val_idx = data_mod.split_dataset(
            train_idx, 1.0 - train_cfg.val_fraction, train_cfg.seed)
        fit_idx = data_mod.DatasetIndex(fit_idx.root, fit_idx.records, "train")
        val_idx = data_mod.DatasetIndex(val_idx.root, val_idx.records, "val")
    for name, idx in (("train", fit_idx), ("val", val_idx), ("test", test_idx)):
        data_mod.save_split_manifest(out_dir / f"split_{name}.txt", idx)
    size = model_cfg.input_size
    fit_data = data_mod.SegmentationDataset(fit_idx, size)
    val_data = data_mod.SegmentationDataset(val_idx, size)
    torch.manual_seed(train_cfg.seed)
    model = HybridSegModel(model_cfg)
    print(f"training on {len(fit_data)} images, validating on {len(val_data)} "
          f"({val_idx.split_tag} split), output -> {out_dir}")
    result = train(model, fit_data, val_data, train_cfg, model_cfg=model_cfg,
                   out_dir=out_dir, augment=cfg["augment"])
    for s in result.history:
        print(f"epoch {s.epoch}: loss {s.train_loss:.4f} "
              f"(bce {s.bce:.4f}, iou {s.iou_loss:.4f}) "
              f"{train_cfg.monitor} {s.monitor_value:.4f} [{s.seconds:.1f}s]")
    print(f"best {train_cfg.monitor} {result.best.monitored_value:.4f} "
          f"at epoch {result.best.epoch}; checkpoints in {out_dir}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, split: str, manifest: str | None) -> int:
    out_dir = _output_dir(cfg, "eval")
    write_config_echo(cfg, out_dir)
    model, record = _load_model(cfg)
    if manifest:
        root = _require(cfg, "dataset_root", "--dataset-root")
        index = data_mod.load_split_manifest(
            manifest, data_mod.scan_dataset(root), "manifest")
    elif split == "all":
        index = data_mod.scan_dataset(_require(cfg, "dataset_root", "--dataset-root"))
    else:
        _, train_idx, test_idx = _splits(cfg)
        index = train_idx if split == "train" else test_idx
    dataset = data_mod.SegmentationDataset(index, record.model_config.input_size)
    result = evaluate(model, dataset, cfg["threshold"], cfg.train.batch_size)
    write_metrics_csv(out_dir / "metrics.csv", result.per_image, result.mean)
    text = (format_metrics_text(result.mean, "per-image-mean") + "\n\n"
            + format_metrics_text(result.pooled, "global-counts"))
    (out_dir / "metrics.txt").write_text(text + "\n")
    print(text)
    return EXIT_OK


def _gather_input_images(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    if path.is_dir():
        return sorted(p for p in path.iterdir()
                      if p.suffix.lower() in data_mod.IMAGE_EXTENSIONS)
    raise UsageError(f"input path {path} does not exist")


def cmd_infer(cfg: RunConfig, input_path: str, model=None) -> int:
    out_dir = _output_dir(cfg, "infer")
    write_config_echo(cfg, out_dir)
    if model is None:
        model, record = _load_model(cfg)
        size = record.model_config.input_size
    else:
        size = cfg.model.input_size
    images = _gather_input_images(Path(input_path))
    if not images:
        raise UsageError(f"no input images found under {input_path}")
    threshold = cfg["threshold"]
    n_failed = 0
    for path in images:
        try:
            with Image.open(path) as im:
                im = im.convert("RGB")
                source_size = im.size  # (W, H)
                if im.size != (size[1], size[0]):
                    im = im.resize((size[1], size[0]), Image.BILINEAR)
                arr = np.asarray(im, dtype=np.float32) / 255.0
        except (OSError, UnidentifiedImageError) as exc:
            print(f"warning: cannot read {path}: {exc}", file=sys.stderr)
            n_failed += 1
            continue
        x = torch.from_numpy(arr).permute(2, 0, 1)
        mean = torch.tensor(data_mod.IMAGENET_MEAN).view(3, 1, 1)
        std = torch.tensor(data_mod.IMAGENET_STD).view(3, 1, 1)
        x = ((x - mean) / std).unsqueeze(0)
        with torch.no_grad():
            prob = torch.sigmoid(model(x))
        if prob.shape[-2:] != (source_size[1], source_size[0]):
            prob = torch.nn.functional.interpolate(
                prob, size=(source_size[1], source_size[0]), mode="bilinear",
                align_corners=False)
        mask = (prob[0, 0] > threshold).numpy().astype(np.uint8) * 255
        Image.fromarray(mask, mode="L").save(out_dir / f"{path.stem}.png")
    n_ok = len(images) - n_failed
    print(f"wrote {n_ok} mask(s) to {out_dir}" +
          (f" ({n_failed} unreadable input(s) skipped)" if n_failed else ""))
    return EXIT_USAGE if n_ok == 0 else EXIT_OK


def cmd_bench(cfg: RunConfig) -> int:
    out_dir = _output_dir(cfg, "bench")
    write_config_echo(cfg, out_dir)
    if cfg["checkpoint"]:
        model, record = _load_model(cfg)
        size = record.model_config.input_size
    else:
        torch.manual_seed(cfg["seed"])
        model = HybridSegModel(cfg.model)
        model.eval()
        size = cfg.model.input_size
    report = fps_benchmark(model, size, cfg["frames"], cfg["warmup"])
    text = "\n".join([
        f"input size: {size[0]}x{size[1]}",
        f"frames: {report.n_frames} (warmup {report.n_warmup})",
        f"fps: {report.fps:.3f}",
        f"latency mean: {report.mean_latency * 1e3:.3f} ms",
        f"latency std: {report.std_latency * 1e3:.3f} ms",
    ])
    (out_dir / "bench.txt").write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_report(cfg: RunConfig, history: str | None, metrics: str | None) -> int:
    from . import report as report_mod

    if not history and not metrics:
        raise UsageError("report needs --history and/or --metrics CSV paths")
    out_dir = _output_dir(cfg, "report")
    write_config_echo(cfg, out_dir)
    summary_parts = []
    if history:
        rows = report_mod.load_history_csv(history)
        report_mod.render_history_plots(rows, out_dir)
        summary_parts.append(report_mod.summarize_history(rows))
    if metrics:
        per_image, aggregates = report_mod.load_metrics_csv(metrics)
        if per_image:
            report_mod.render_metric_distributions(per_image, out_dir)
        summary_parts.append(report_mod.summarize_metrics(per_image, aggregates))
    summary = "\n\n".join(summary_parts)
    (out_dir / "summary.txt").write_text(summary + "\n")
    print(summary)
    return EXIT_OK


def cmd_dataset_check(cfg: RunConfig) -> int:
    root = _require(cfg, "dataset_root", "--dataset-root")
    if not Path(root).is_dir():
        raise UsageError(f"dataset root {root} does not exist")
    report = data_mod.check_dataset(root)
    out_dir = _output_dir(cfg, "dataset-check")
    write_config_echo(cfg, out_dir)
    text = report.format_text()
    (out_dir / "dataset_check.txt").write_text(text + "\n")
    print(text)
    return EXIT_OK if report.clean else EXIT_USAGE


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage failures exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--dataset-root", dest="dataset_root")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--checkpoint")
    p.add_argument("--seed", type=int)
    p.add_argument("--threshold", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hybridseg",
                     description="Hybrid transformer-CNN segmentation pipeline")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="fit a model on an image/mask dataset")
    _add_common(p)
    p.add_argument("--monitor-test", action="store_true", dest="monitor_test",
                   help="monitor the test split for early stopping instead of a "
                        "held-out validation slice")

    p = sub.add_parser("eval", help="compute metrics for a checkpoint on a split")
    _add_common(p)
    p.add_argument("--split", choices=("train", "test", "all"), default="all")
    p.add_argument("--manifest", help="evaluate exactly the ids in this manifest file")

    p = sub.add_parser("infer", help="write predicted masks for images")
    _add_common(p)
    p.add_argument("--input", required=True, help="image file or directory")

    p = sub.add_parser("bench", help="measure inference frames per second")
    _add_common(p)
    p.add_argument("--frames", type=int)
    p.add_argument("--warmup", type=int)

    p = sub.add_parser("report", help="render plots and a summary from CSVs")
    _add_common(p)
    p.add_argument("--history", help="training history CSV")
    p.add_argument("--metrics", help="per-image metrics CSV")

    p = sub.add_parser("dataset-check", help="validate an image/mask dataset tree")
    _add_common(p)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.split, args.manifest)
        if args.command == "infer":
            return cmd_infer(cfg, args.input)
        if args.command == "bench":
            return cmd_bench(cfg)
        if args.command == "report":
            return cmd_report(cfg, args.history, args.metrics)
        if args.command == "dataset-check":
            return cmd_dataset_check(cfg)
        raise UsageError(f"unknown command {args.command!r}")
    except (UsageError, ParameterError, DimensionError, IngestionError,
            CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except HybridSegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
