"""Shared builders for synthetic fixtures used across the test modules."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from hybridseg.config import ModelConfig, TrainConfig
from hybridseg.data import IMAGENET_MEAN, IMAGENET_STD, Sample


def tiny_model_config(**overrides) -> ModelConfig:
    """32x32-input toy backbone used for gradient and shape tests."""
    kwargs = dict(base_channels=8, stage_depths=(1, 1, 1, 1),
                  stage_heads=(1, 1, 2, 2), window_size=4,
                  input_size=(32, 32), decoder_widths=(8, 8, 8, 8))
    kwargs.update(overrides)
    return ModelConfig(**kwargs)


def overfit_model_config() -> ModelConfig:
    """Wide-decoder toy model that can memorize 8 disks in 200 steps."""
    return ModelConfig(base_channels=16, stage_depths=(1, 1, 1, 1),
                       stage_heads=(2, 2, 4, 4), window_size=8,
                       input_size=(96, 96), decoder_widths=(512, 256, 128, 64))


def normalize_image(img: torch.Tensor) -> torch.Tensor:
    mean = torch.tensor(IMAGENET_MEAN).view(3, 1, 1)
    std = torch.tensor(IMAGENET_STD).view(3, 1, 1)
    return (img - mean) / std


def disk_mask(size: int, cy: int, cx: int, r: int) -> torch.Tensor:
    yy, xx = torch.meshgrid(torch.arange(size), torch.arange(size), indexing="ij")
    return (((yy - cy) ** 2 + (xx - cx) ** 2) <= r * r).float()


def disk_samples(n: int = 8, size: int = 96, rbase: int = 28) -> list[Sample]:
    """White disks on black; the image is the mask replicated over RGB."""
    samples = []
    for i in range(n):
        cy = size // 2 - 8 + (i * 5) % 16
        cx = size // 2 - 8 + (i * 9) % 16
        r = rbase + (i % 5) * 2
        mask = disk_mask(size, cy, cx, r)
        image = normalize_image(mask.unsqueeze(0).repeat(3, 1, 1))
        samples.append(Sample(image=image, mask=mask.unsqueeze(0), id=f"disk{i:02d}"))
    return samples


def write_dataset_tree(root: Path, n: int, size: int = 16,
                       mask_ext: str = ".png") -> Path:
    """A tiny on-disk dataset: <root>/images/*.png + <root>/masks/*.png."""
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(123)
    for i in range(n):
        stem = f"img{i:04d}"
        pixels = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
        Image.fromarray(pixels, "RGB").save(root / "images" / f"{stem}.png")
        mask = (rng.random((size, size)) > 0.5).astype(np.uint8) * 255
        Image.fromarray(mask, "L").save(root / "masks" / f"{stem}{mask_ext}")
    return root


def quick_train_config(**overrides) -> TrainConfig:
    kwargs = dict(learning_rate=1e-4, weight_decay=1e-4, batch_size=4,
                  max_epochs=2, patience=2, scale_set=(32,), seed=0,
                  val_fraction=0.0)
    kwargs.update(overrides)
    return TrainConfig(**kwargs)


def random_samples(n: int, size: int = 32, seed: int = 0) -> list[Sample]:
    g = torch.Generator().manual_seed(seed)
    out = []
    for i in range(n):
        image = torch.randn(3, size, size, generator=g)
        mask = (torch.rand(1, size, size, generator=g) > 0.5).float()
        out.append(Sample(image=image, mask=mask, id=f"rand{i:03d}"))
    return out
