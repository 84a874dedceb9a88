"""Hierarchical shifted-window transformer encoder.

Produces a four-stage feature pyramid from an RGB batch: spatial size
drops by 2x per stage (starting at 1/4 of the input) while channels
double (C, 2C, 4C, 8C). Stages are stacks of window-attention blocks
that alternate between unshifted and half-window cyclically shifted
layouts; feature maps whose sides do not tile the window are zero-padded
up to the next multiple and cropped again on reverse, with shifted
attention masking pad/cross-boundary pairs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from .config import ModelConfig
from .exceptions import DimensionError, ParameterError

MASK_FILL = -1e9  # additive attention penalty; exp() underflows to 0


@dataclass(frozen=True)
class FeatureMap:
    """A (batch, channels, height, width) tensor tagged with its pyramid stage."""

    data: Tensor
    stage: int


@dataclass(frozen=True)
class FeaturePyramid:
    f1: FeatureMap
    f2: FeatureMap
    f3: FeatureMap
    f4: FeatureMap

    def maps(self) -> tuple[FeatureMap, FeatureMap, FeatureMap, FeatureMap]:
        return (self.f1, self.f2, self.f3, self.f4)


@dataclass(frozen=True)
class WindowSet:
    """Windowed token layout: (batch * num_windows, window_size**2, channels).

    ``source_shape`` is the pre-padding spatial size, so a roundtrip
    through :func:`window_reverse` recovers the original map exactly.
    """

    data: Tensor
    source_shape: tuple[int, int]
    window_size: int
    shift: int
    batch: int

    @property
    def num_windows(self) -> int:
        h, w = self.source_shape
        return math.ceil(h / self.window_size) * math.ceil(w / self.window_size)


def _partition_tokens(x: Tensor, window_size: int) -> Tensor:
    """(B, H, W, C) -> (B * nW, window_size**2, C); H and W must tile."""
    b, h, w, c = x.shape
    x = x.view(b, h // window_size, window_size, w // window_size, window_size, c)
    x = x.permute(0, 1, 3, 2, 4, 5).contiguous()
    return x.view(-1, window_size * window_size, c)


def _reverse_tokens(windows: Tensor, window_size: int, b: int, h: int, w: int) -> Tensor:
    """Inverse of :func:`_partition_tokens` for a padded (h, w) canvas."""
    c = windows.shape[-1]
    x = windows.view(b, h // window_size, w // window_size, window_size, window_size, c)
    x = x.permute(0, 1, 3, 2, 4, 5).contiguous()
    return x.view(b, h, w, c)


def window_partition(x: Tensor, window_size: int, shift: int = 0) -> WindowSet:
    """Cut a (B, C, H, W) map into attention windows.

    Pads H and W up to multiples of ``window_size`` (zeros), applies the
    cyclic shift, then tiles. ``shift`` must lie in [0, window_size).
    """
    if not 0 <= shift < window_size:
        raise ParameterError(f"shift {shift} must be in [0, window_size={window_size})")
    if x.dim() != 4:
        raise DimensionError(f"expected a 4-d (B, C, H, W) tensor, got {x.dim()}-d")
    b, _, h, w = x.shape
    t = x.permute(0, 2, 3, 1)  # (B, H, W, C)
    pad_h = (window_size - h % window_size) % window_size
    pad_w = (window_size - w % window_size) % window_size
    if pad_h or pad_w:
        t = F.pad(t, (0, 0, 0, pad_w, 0, pad_h))
    if shift > 0:
        t = torch.roll(t, shifts=(-shift, -shift), dims=(1, 2))
    data = _partition_tokens(t, window_size)
    return WindowSet(data=data, source_shape=(h, w), window_size=window_size,
                     shift=shift, batch=b)


def window_reverse(ws: WindowSet) -> Tensor:
    """Undo :func:`window_partition`: un-tile, un-shift, crop the padding."""
    h, w = ws.source_shape
    wsz = ws.window_size
    hp = math.ceil(h / wsz) * wsz
    wp = math.ceil(w / wsz) * wsz
    t = _reverse_tokens(ws.data, wsz, ws.batch, hp, wp)
    if ws.shift > 0:
        t = torch.roll(t, shifts=(ws.shift, ws.shift), dims=(1, 2))
    t = t[:, :h, :w, :]
    return t.permute(0, 3, 1, 2).contiguous()


def build_attention_mask(h: int, w: int, window_size: int, shift: int) -> Tensor:
    """Mask for shifted windows on a zero-padded (h, w) map.

    Returns (num_windows, window_size**2, window_size**2) with 0 for
    allowed pairs and MASK_FILL for pairs that cross a cyclic-wrap
    boundary or touch padding. Pad-pad pairs stay unmasked; their
    outputs are cropped away on reverse.
    """
    if shift <= 0:
        raise ParameterError("attention masks are only defined for shift > 0")
    hp = math.ceil(h / window_size) * window_size
    wp = math.ceil(w / window_size) * window_size
    region = torch.zeros(1, hp, wp, 1)
    cnt = 0
    for hs in (slice(0, hp - window_size), slice(hp - window_size, hp - shift),
               slice(hp - shift, None)):
        for vs in (slice(0, wp - window_size), slice(wp - window_size, wp - shift),
                   slice(wp - shift, None)):
            region[:, hs, vs, :] = cnt
            cnt += 1
    if hp > h or wp > w:
        pad = torch.zeros(1, hp, wp, 1)
        pad[:, h:, :, :] = 1.0
        pad[:, :, w:, :] = 1.0
        # shift the pad flags the same way the features get shifted
        pad = torch.roll(pad, shifts=(-shift, -shift), dims=(1, 2))
        region = region + pad * 9.0
    tokens = _partition_tokens(region, window_size).squeeze(-1)  # (nW, T)
    diff = tokens.unsqueeze(1) - tokens.unsqueeze(2)
    return torch.where(diff == 0, 0.0, MASK_FILL)


def attention_core(q: Tensor, k: Tensor, v: Tensor, scale: float,
                   bias: Tensor | None = None, mask: Tensor | None = None,
                   return_attn: bool = False) -> tuple[Tensor, Tensor | None]:
    """Scaled dot-product attention over windowed tokens.

    q, k, v: (B * nW, heads, T, head_dim); bias broadcasts over the first
    axis; mask is (nW, T, T) additive and is tiled across the batch.
    """
    attn = (q @ k.transpose(-2, -1)) * scale
    if bias is not None:
        attn = attn + bias
    if mask is not None:
        nw, t, _ = mask.shape
        bn, heads = attn.shape[0], attn.shape[1]
        attn = attn.view(bn // nw, nw, heads, t, t)
        attn = attn + mask.to(attn.dtype).unsqueeze(0).unsqueeze(2)
        attn = attn.view(bn, heads, t, t)
    attn = attn.softmax(dim=-1)
    out = attn @ v
    return out, (attn if return_attn else None)


class WindowAttention(nn.Module):
    """Multi-head self-attention within windows, with learned relative position bias."""

    def __init__(self, dim: int, window_size: int, num_heads: int) -> None:
        super().__init__()
        if dim % num_heads != 0:
            raise ParameterError(f"dim {dim} not divisible by num_heads {num_heads}")
        self.dim = dim
        self.window_size = window_size
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5

        self.relative_position_bias_table = nn.Parameter(
            torch.zeros((2 * window_size - 1) ** 2, num_heads))
        coords = torch.stack(torch.meshgrid(
            torch.arange(window_size), torch.arange(window_size), indexing="ij"))
        flat = torch.flatten(coords, 1)  # (2, T)
        rel = flat[:, :, None] - flat[:, None, :]
        rel = rel.permute(1, 2, 0).contiguous()
        rel[:, :, 0] += window_size - 1
        rel[:, :, 1] += window_size - 1
        rel[:, :, 0] *= 2 * window_size - 1
        self.register_buffer("relative_position_index", rel.sum(-1), persistent=False)

        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)
        nn.init.trunc_normal_(self.relative_position_bias_table, std=0.02)

    def _bias(self) -> Tensor:
        t = self.window_size * self.window_size
        bias = self.relative_position_bias_table[self.relative_position_index.view(-1)]
        return bias.view(t, t, -1).permute(2, 0, 1).contiguous()  # (heads, T, T)

    def forward(self, x: Tensor, mask: Tensor | None = None,
                return_attn: bool = False) -> Tensor | tuple[Tensor, Tensor]:
        bn, t, c = x.shape
        qkv = self.qkv(x).reshape(bn, t, 3, self.num_heads, c // self.num_heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4).unbind(0)
        out, attn = attention_core(q, k, v, self.scale, bias=self._bias(),
                                   mask=mask, return_attn=return_attn)
        out = out.transpose(1, 2).reshape(bn, t, c)
        out = self.proj(out)
        if return_attn:
            return out, attn
        return out


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden_dim: int) -> None:
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden_dim)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden_dim, dim)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(self.act(self.fc1(x)))


class SwinBlock(nn.Module):
    """Pre-norm window-attention block with residuals.

    ``shift`` = 0 gives plain window attention; a positive shift rolls the
    map before windowing and attaches the matching boundary mask.
    """

    def __init__(self, dim: int, num_heads: int, window_size: int, shift: int,
                 mlp_ratio: float) -> None:
        super().__init__()
        if not 0 <= shift < window_size:
            raise ParameterError(f"shift {shift} must be in [0, window_size={window_size})")
        self.window_size = window_size
        self.shift = shift
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, window_size, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))
        self._mask_cache: dict[tuple[int, int], Tensor] = {}

    def _mask_for(self, h: int, w: int, device, dtype) -> Tensor | None:
        if self.shift == 0:
            return None
        key = (h, w)
        mask = self._mask_cache.get(key)
        if mask is None:
            mask = build_attention_mask(h, w, self.window_size, self.shift)
            self._mask_cache[key] = mask
        return mask.to(device=device, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        b, c, h, w = x.shape
        tokens = x.permute(0, 2, 3, 1)  # (B, H, W, C)

        t = self.norm1(tokens)
        ws = window_partition(t.permute(0, 3, 1, 2), self.window_size, self.shift)
        mask = self._mask_for(h, w, x.device, x.dtype)
        attended = self.attn(ws.data, mask=mask)
        t = window_reverse(WindowSet(attended, ws.source_shape, ws.window_size,
                                     ws.shift, ws.batch))
        tokens = tokens + t.permute(0, 2, 3, 1)

        tokens = tokens + self.mlp(self.norm2(tokens))
        return tokens.permute(0, 3, 1, 2).contiguous()


class PatchEmbed(nn.Module):
    """Non-overlapping 4x4 patch embedding (stage 1): (B, 3, H, W) -> (B, C, H/4, W/4)."""

    def __init__(self, embed_dim: int, in_channels: int = 3) -> None:
        super().__init__()
        self.in_channels = in_channels
        self.proj = nn.Conv2d(in_channels, embed_dim, kernel_size=4, stride=4)
        self.norm = nn.LayerNorm(embed_dim)

    def forward(self, x: Tensor) -> Tensor:
        if x.dim() != 4:
            raise DimensionError(f"expected a 4-d (B, C, H, W) image batch, got {x.dim()}-d")
        _, c, h, w = x.shape
        if c != self.in_channels:
            raise DimensionError(f"channel axis is {c}, expected {self.in_channels}")
        if h % 4 != 0:
            raise DimensionError(f"height {h} not divisible by patch size 4")
        if w % 4 != 0:
            raise DimensionError(f"width {w} not divisible by patch size 4")
        x = self.proj(x)
        x = x.permute(0, 2, 3, 1)
        x = self.norm(x)
        return x.permute(0, 3, 1, 2).contiguous()


class PatchMerging(nn.Module):
    """Stage transition: halve H and W, double channels (2x2 concat + linear)."""

    def __init__(self, dim: int) -> None:
        super().__init__()
        self.norm = nn.LayerNorm(4 * dim)
        self.reduction = nn.Linear(4 * dim, 2 * dim, bias=False)

    def forward(self, x: Tensor) -> Tensor:
        _, _, h, w = x.shape
        if h % 2 != 0:
            raise DimensionError(f"height {h} must be even for patch merging")
        if w % 2 != 0:
            raise DimensionError(f"width {w} must be even for patch merging")
        t = x.permute(0, 2, 3, 1)
        t = torch.cat([t[:, 0::2, 0::2, :], t[:, 1::2, 0::2, :],
                       t[:, 0::2, 1::2, :], t[:, 1::2, 1::2, :]], dim=-1)
        t = self.reduction(self.norm(t))
        return t.permute(0, 3, 1, 2).contiguous()


def _init_transformer_weights(module: nn.Module) -> None:
    if isinstance(module, nn.Linear):
        nn.init.trunc_normal_(module.weight, std=0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.Conv2d):
        nn.init.trunc_normal_(module.weight, std=0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


class SwinEncoder(nn.Module):
    """Four-stage backbone emitting the multi-resolution feature pyramid.

    Inference with frozen weights is reentrant; training requires
    exclusive access to the parameters.
    """

    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.cfg = cfg
        dims = cfg.stage_channels
        self.patch_embed = PatchEmbed(dims[0])
        self.stages = nn.ModuleList()
        self.merges = nn.ModuleList()
        self.out_norms = nn.ModuleList()
        for i in range(4):
            blocks = nn.ModuleList([
                SwinBlock(dims[i], cfg.stage_heads[i], cfg.window_size,
                          shift=0 if j % 2 == 0 else cfg.window_size // 2,
                          mlp_ratio=cfg.mlp_ratio)
                for j in range(cfg.stage_depths[i])
            ])
            self.stages.append(blocks)
            self.out_norms.append(nn.LayerNorm(dims[i]))
            if i < 3:
                self.merges.append(PatchMerging(dims[i]))
        self.apply(_init_transformer_weights)
        if cfg.pretrained_path:
            self.load_backbone_weights(cfg.pretrained_path)

    def load_backbone_weights(self, path: str) -> tuple[list[str], list[str]]:
        """Optional hook: load externally trained weights by matching names."""
        state = torch.load(path, map_location="cpu", weights_only=True)
        if isinstance(state, dict) and "model" in state and isinstance(state["model"], dict):
            state = state["model"]
        result = self.load_state_dict(state, strict=False)
        return list(result.missing_keys), list(result.unexpected_keys)

    def _validate_input(self, x: Tensor) -> None:
        if x.dim() != 4:
            raise DimensionError(f"expected a 4-d (B, 3, H, W) image batch, got {x.dim()}-d")
        _, c, h, w = x.shape
        if c != 3:
            raise DimensionError(f"channel axis is {c}, expected 3")
        for name, v in (("height", h), ("width", w)):
            if v < 32:
                raise DimensionError(f"{name} {v} below the 32-pixel minimum")
            if v % 32 != 0:
                raise DimensionError(f"{name} {v} not divisible by 32")

    def forward(self, x: Tensor) -> FeaturePyramid:
        self._validate_input(x)
        x = self.patch_embed(x)
        outs = []
        for i in range(4):
            for block in self.stages[i]:
                x = block(x)
            t = self.out_norms[i](x.permute(0, 2, 3, 1)).permute(0, 3, 1, 2).contiguous()
            outs.append(FeatureMap(data=t, stage=i + 1))
            if i < 3:
                x = self.merges[i](x)
        return FeaturePyramid(*outs)
