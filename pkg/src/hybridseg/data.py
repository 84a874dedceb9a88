"""Dataset ingestion, splitting, preprocessing, and paired augmentation.

Expected layout: ``<root>/images/<id>.jpg|png`` and
``<root>/masks/<id>.jpg|png`` with matching stems. Images are
bilinear-resized and channel-normalized; masks are nearest-resized and
binarized (value > 127 -> 1) so they stay exactly {0, 1} through every
pipeline stage.
"""
from __future__ import annotations

import math
import random
import zlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError
from torch import Tensor

from .exceptions import IngestionError, UsageError

IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png")
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
MASK_THRESHOLD = 127  # 8-bit values above this count as foreground


@dataclass(frozen=True)
class DatasetRecord:
    image_path: Path
    mask_path: Path
    image_id: str


@dataclass(frozen=True)
class DatasetIndex:
    root: Path
    records: tuple[DatasetRecord, ...]
    split_tag: str = "all"

    def __len__(self) -> int:
        return len(self.records)

    def ids(self) -> list[str]:
        return [r.image_id for r in self.records]


@dataclass(frozen=True)
class Sample:
    """A normalized (3, H, W) image with its binary (1, H, W) mask."""

    image: Tensor
    mask: Tensor
    id: str


def _list_by_stem(directory: Path) -> dict[str, Path]:
    out: dict[str, Path] = {}
    for path in sorted(directory.iterdir()):
        if path.suffix.lower() not in IMAGE_EXTENSIONS or not path.is_file():
            continue
        if path.stem in out:
            raise IngestionError(f"duplicate id {path.stem!r} in {directory}")
        out[path.stem] = path
    return out


def scan_dataset(root: str | Path) -> DatasetIndex:
    """Index all image/mask pairs under ``root``, sorted by id."""
    root = Path(root)
    images_dir = root / "images"
    masks_dir = root / "masks"
    if not images_dir.is_dir() or not masks_dir.is_dir():
        raise UsageError(f"{root} must contain images/ and masks/ subdirectories")
    images = _list_by_stem(images_dir)
    masks = _list_by_stem(masks_dir)
    missing = [stem for stem in images if stem not in masks]
    if missing:
        raise IngestionError(
            f"{len(missing)} image(s) without a mask: {', '.join(sorted(missing)[:20])}")
    records = tuple(DatasetRecord(images[stem], masks[stem], stem)
                    for stem in sorted(images))
    if not records:
        raise UsageError(f"no image/mask pairs found under {root}")
    return DatasetIndex(root=root, records=records, split_tag="all")


def split_dataset(index: DatasetIndex, train_fraction: float,
                  seed: int) -> tuple[DatasetIndex, DatasetIndex]:
    """Deterministic shuffled split; partitions are disjoint and exhaustive."""
    if not 0.0 < train_fraction < 1.0:
        raise UsageError(f"train_fraction {train_fraction} must be in (0, 1)")
    order = list(index.records)
    random.Random(seed).shuffle(order)
    n_train = int(round(train_fraction * len(order)))
    train = tuple(sorted(order[:n_train], key=lambda r: r.image_id))
    test = tuple(sorted(order[n_train:], key=lambda r: r.image_id))
    return (DatasetIndex(index.root, train, "train"),
            DatasetIndex(index.root, test, "test"))


def save_split_manifest(path: str | Path, index: DatasetIndex) -> None:
    """Persist a split as one id per line so it can be audited and reloaded."""
    Path(path).write_text("".join(f"{r.image_id}\n" for r in index.records))


def load_split_manifest(path: str | Path, source: DatasetIndex,
                        split_tag: str) -> DatasetIndex:
    ids = [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]
    by_id = {r.image_id: r for r in source.records}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise IngestionError(
            f"manifest {path} names {len(missing)} unknown id(s): {missing[:10]}")
    return DatasetIndex(source.root, tuple(by_id[i] for i in ids), split_tag)


def binarize_mask(raw: Tensor) -> Tensor:
    """Map 8-bit mask values to {0., 1.}: value > 127 is foreground."""
    return (raw > MASK_THRESHOLD).to(torch.float32)


def load_and_preprocess(record: DatasetRecord, target_size: tuple[int, int],
                        mean: tuple[float, float, float] = IMAGENET_MEAN,
                        std: tuple[float, float, float] = IMAGENET_STD) -> Sample:
    """Load one record: bilinear image resize + normalize, nearest mask resize + binarize."""
    h, w = target_size
    try:
        with Image.open(record.image_path) as im:
            im = im.convert("RGB")
            if im.size != (w, h):
                im = im.resize((w, h), Image.BILINEAR)
            image = np.asarray(im, dtype=np.float32) / 255.0
        with Image.open(record.mask_path) as mm:
            mm = mm.convert("L")
            if mm.size != (w, h):
                mm = mm.resize((w, h), Image.NEAREST)
            mask_raw = np.asarray(mm, dtype=np.float32)
    except (OSError, UnidentifiedImageError) as exc:
        raise IngestionError(f"cannot read record {record.image_id!r}: {exc}") from exc
    image_t = torch.from_numpy(image).permute(2, 0, 1)
    mean_t = torch.tensor(mean).view(3, 1, 1)
    std_t = torch.tensor(std).view(3, 1, 1)
    image_t = (image_t - mean_t) / std_t
    mask_t = binarize_mask(torch.from_numpy(mask_raw)).unsqueeze(0)
    return Sample(image=image_t, mask=mask_t, id=record.image_id)


def flip_lr(sample: Sample) -> Sample:
    return replace(sample, image=torch.flip(sample.image, dims=(-1,)),
                   mask=torch.flip(sample.mask, dims=(-1,)))


def flip_tb(sample: Sample) -> Sample:
    return replace(sample, image=torch.flip(sample.image, dims=(-2,)),
                   mask=torch.flip(sample.mask, dims=(-2,)))


def rotate90(sample: Sample, k: int) -> Sample:
    """Rotate image and mask by k quarter-turns (mask-exact, square inputs)."""
    return replace(sample, image=torch.rot90(sample.image, k, dims=(-2, -1)),
                   mask=torch.rot90(sample.mask, k, dims=(-2, -1)))


def rotate_any(sample: Sample, angle_degrees: float) -> Sample:
    """Arbitrary-angle rotation: bilinear for the image, nearest for the mask."""
    theta_rad = math.radians(angle_degrees)
    cos, sin = math.cos(theta_rad), math.sin(theta_rad)
    theta = torch.tensor([[cos, -sin, 0.0], [sin, cos, 0.0]], dtype=torch.float32)
    img = sample.image.unsqueeze(0)
    msk = sample.mask.unsqueeze(0)
    grid = F.affine_grid(theta.unsqueeze(0), list(img.shape), align_corners=False)
    img = F.grid_sample(img, grid, mode="bilinear", padding_mode="zeros",
                        align_corners=False)
    msk = F.grid_sample(msk, grid, mode="nearest", padding_mode="zeros",
                        align_corners=False)
    return replace(sample, image=img.squeeze(0), mask=msk.squeeze(0))


def augment(sample: Sample, rng: random.Random,
            arbitrary_rotation: bool = False) -> Sample:
    """Random rotation plus left-right / top-bottom flips, identical on image and mask.

    Rotation defaults to quarter-turn multiples so the mask stays exact;
    ``arbitrary_rotation`` switches to a uniform angle with nearest-neighbor
    mask resampling.
    """
    if arbitrary_rotation:
        sample = rotate_any(sample, rng.uniform(-180.0, 180.0))
    else:
        sample = rotate90(sample, rng.randrange(4))
    if rng.random() < 0.5:
        sample = flip_lr(sample)
    if rng.random() < 0.5:
        sample = flip_tb(sample)
    return sample


def record_seed(global_seed: int, image_id: str) -> int:
    """Stable per-record seed so parallel prefetch stays reproducible."""
    return (global_seed * 0x9E3779B1 + zlib.crc32(image_id.encode())) % (2 ** 63)


@dataclass
class DatasetCheckReport:
    n_images: int
    n_masks: int
    n_pairs: int
    missing_masks: list[str]
    orphan_masks: list[str]
    duplicate_ids: list[str]
    unreadable: list[str]
    non_binary_masks: list[str]
    resolution_histogram: dict[tuple[int, int], int]

    @property
    def clean(self) -> bool:
        """No missing pairs, duplicates, or unreadable files; non-binary masks only warn."""
        return not (self.missing_masks or self.duplicate_ids or self.unreadable)

    def format_text(self) -> str:
        lines = [f"{self.n_pairs} records, "
                 f"{len(self.missing_masks) + len(self.duplicate_ids) + len(self.unreadable)} issues",
                 f"images: {self.n_images}  masks: {self.n_masks}  pairs: {self.n_pairs}"]
        for label, items in (("missing mask for", self.missing_masks),
                             ("duplicate id", self.duplicate_ids),
                             ("unreadable", self.unreadable),
                             ("orphan mask", self.orphan_masks)):
            for item in items:
                lines.append(f"{label}: {item}")
        for item in self.non_binary_masks:
            lines.append(f"warning: non-binary mask values in {item}")
        lines.append("resolution histogram (WxH: count):")
        for (w, h), n in sorted(self.resolution_histogram.items()):
            lines.append(f"  {w}x{h}: {n}")
        return "\n".join(lines)


def _scan_stems(directory: Path) -> tuple[dict[str, Path], list[str]]:
    out: dict[str, Path] = {}
    dups: list[str] = []
    if not directory.is_dir():
        return out, dups
    for path in sorted(directory.iterdir()):
        if path.suffix.lower() not in IMAGE_EXTENSIONS or not path.is_file():
            continue
        if path.stem in out:
            dups.append(path.stem)
        else:
            out[path.stem] = path
    return out, dups


def check_dataset(root: str | Path) -> DatasetCheckReport:
    """Validation sweep: pairing, readability, mask binarity, resolutions."""
    root = Path(root)
    images, image_dups = _scan_stems(root / "images")
    masks, mask_dups = _scan_stems(root / "masks")
    missing = sorted(stem for stem in images if stem not in masks)
    orphans = sorted(stem for stem in masks if stem not in images)
    unreadable: list[str] = []
    non_binary: list[str] = []
    histogram: dict[tuple[int, int], int] = {}
    n_pairs = 0
    for stem, image_path in sorted(images.items()):
        if stem not in masks:
            continue
        n_pairs += 1
        try:
            with Image.open(image_path) as im:
                size = im.size
            histogram[size] = histogram.get(size, 0) + 1
            with Image.open(masks[stem]) as mm:
                values = np.unique(np.asarray(mm.convert("L")))
        except (OSError, UnidentifiedImageError):
            unreadable.append(stem)
            continue
        if not np.isin(values, (0, 255)).all():
            non_binary.append(masks[stem].name)
    return DatasetCheckReport(
        n_images=len(images), n_masks=len(masks), n_pairs=n_pairs,
        missing_masks=missing, orphan_masks=orphans,
        duplicate_ids=sorted(image_dups + mask_dups),
        unreadable=unreadable, non_binary_masks=non_binary,
        resolution_histogram=histogram)


class SegmentationDataset:
    """Sequence view over a DatasetIndex that loads and preprocesses on access."""

    def __init__(self, index: DatasetIndex, target_size: tuple[int, int],
                 mean: tuple[float, float, float] = IMAGENET_MEAN,
                 std: tuple[float, float, float] = IMAGENET_STD) -> None:
        self.index = index
        self.target_size = tuple(target_size)
        self.mean = mean
        self.std = std

    def __len__(self) -> int:
        return len(self.index)

    def __getitem__(self, i: int) -> Sample:
        return load_and_preprocess(self.index.records[i], self.target_size,
                                   self.mean, self.std)
