"""Model and training hyperparameter containers.

Defaults mirror the tiny hierarchical-backbone configuration (C=96,
depths [2,2,6,2], heads [3,6,12,24]) with a window of 11 so that every
stage of a 352x352 input (88, 44, 22, 11) tiles exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

from .exceptions import ParameterError


@dataclass
class ModelConfig:
    base_channels: int = 96
    num_classes: int = 1
    window_size: int = 11
    stage_depths: tuple[int, int, int, int] = (2, 2, 6, 2)
    stage_heads: tuple[int, int, int, int] = (3, 6, 12, 24)
    mlp_ratio: float = 4.0
    decoder_widths: tuple[int, int, int, int] = (64, 128, 256, 512)
    input_size: tuple[int, int] = (352, 352)
    pretrained_path: str | None = None

    def __post_init__(self) -> None:
        self.stage_depths = tuple(self.stage_depths)
        self.stage_heads = tuple(self.stage_heads)
        self.decoder_widths = tuple(self.decoder_widths)
        self.input_size = tuple(self.input_size)
        if self.base_channels < 1:
            raise ParameterError("base_channels must be positive")
        if self.num_classes < 1:
            raise ParameterError("num_classes must be positive")
        if self.window_size < 1:
            raise ParameterError("window_size must be positive")
        if len(self.stage_depths) != 4 or any(d < 1 for d in self.stage_depths):
            raise ParameterError("stage_depths must be 4 positive integers")
        if len(self.stage_heads) != 4 or any(h < 1 for h in self.stage_heads):
            raise ParameterError("stage_heads must be 4 positive integers")
        if len(self.decoder_widths) != 4 or any(w < 1 for w in self.decoder_widths):
            raise ParameterError("decoder_widths must be 4 positive integers")
        if self.mlp_ratio <= 0:
            raise ParameterError("mlp_ratio must be positive")
        for i, heads in enumerate(self.stage_heads):
            channels = self.stage_channels[i]
            if channels % heads != 0:
                raise ParameterError(
                    f"stage {i + 1} channels {channels} not divisible by "
                    f"{heads} heads"
                )
        h, w = self.input_size
        if h % 32 != 0 or w % 32 != 0:
            raise ParameterError(f"input_size {self.input_size} must be divisible by 32")

    @property
    def stage_channels(self) -> tuple[int, int, int, int]:
        c = self.base_channels
        return (c, 2 * c, 4 * c, 8 * c)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 8
    max_epochs: int = 100
    patience: int = 37
    min_delta: float = 1e-4
    loss_lambda: float = 1.0
    # multi-scale choices must respect the divisible-by-32 input contract
    scale_set: tuple[int, ...] = (256, 352, 448)
    seed: int = 0
    monitor: str = "dsc"
    threshold: float = 0.5
    val_fraction: float = 0.1
    monitor_test: bool = False
    grad_clip: float = 0.0

    def __post_init__(self) -> None:
        self.scale_set = tuple(self.scale_set)
        if self.learning_rate <= 0:
            raise ParameterError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ParameterError("max_epochs must be >= 1")
        if not 0 < self.patience <= self.max_epochs:
            raise ParameterError("patience must be in [1, max_epochs]")
        if self.loss_lambda <= 0:
            raise ParameterError("loss_lambda must be positive")
        if not self.scale_set or any(s % 32 != 0 for s in self.scale_set):
            raise ParameterError("scale_set sizes must be divisible by 32")
        if not 0 < self.threshold < 1:
            raise ParameterError("threshold must be in (0, 1)")
        if not 0 <= self.val_fraction < 1:
            raise ParameterError("val_fraction must be in [0, 1)")


def config_field_names(cls) -> list[str]:
    return [f.name for f in fields(cls)]
