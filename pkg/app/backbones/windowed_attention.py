from typing import Optional

import torch
import torch.nn.functional as F
from einops import rearrange
from torch import nn

from prompt import ImageTokenBlock, PromptState, apply_layer

from .base import SegmentationModel
from .blocks import ConvBlock, Mlp, UpBlock
from .models import BackboneConfig

MASK_VALUE = -100.0


def window_partition(x: torch.Tensor, window: int) -> torch.Tensor:
    """(B, D, H, W, C) -> (B * nW, window**3, C)"""
    return rearrange(
        x, "b (d wd) (h wh) (w ww) c -> (b d h w) (wd wh ww) c", wd=window, wh=window, ww=window
    )


def window_reverse(windows: torch.Tensor, window: int, batch: int, dims) -> torch.Tensor:
    d, h, w = (s // window for s in dims)
    return rearrange(
        windows,
        "(b d h w) (wd wh ww) c -> b (d wd) (h wh) (w ww) c",
        b=batch, d=d, h=h, w=w, wd=window, wh=window, ww=window,
    )


def shifted_window_mask(dims, window: int, shift: int) -> torch.Tensor:
    """(nW, T, T) additive mask keeping attention inside the regions a cyclic shift glued together."""
    regions = torch.zeros(1, *dims, 1)
    label = 0
    spans = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
    for sd in spans:
        for sh in spans:
            for sw in spans:
                regions[:, sd, sh, sw, :] = label
                label += 1
    ids = window_partition(regions, window).squeeze(-1)
    mask = ids.unsqueeze(1) - ids.unsqueeze(2)
    return mask.masked_fill(mask != 0, MASK_VALUE).masked_fill(mask == 0, 0.0)


class WindowAttention(nn.Module):
    def __init__(self, channels: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.qkv = nn.Linear(channels, 3 * channels)
        self.proj = nn.Linear(channels, channels)

    def forward(self, tokens: torch.Tensor, mask: Optional[torch.Tensor]) -> torch.Tensor:
        q, k, v = rearrange(self.qkv(tokens), "n t (three h e) -> three n h t e", three=3, h=self.num_heads)
        out = F.scaled_dot_product_attention(q, k, v, attn_mask=mask)
        return self.proj(rearrange(out, "n h t e -> n t (h e)"))


class SwinBlock(nn.Module):
    """
    Window attention block. Prompt tokens, when given, are appended to every
    window as extra attention slots; their outputs are not returned.
    """

    def __init__(self, channels: int, num_heads: int, window: int, shift: int, mlp_ratio: float):
        super().__init__()
        self.window = window
        self.shift = shift
        self.norm1 = nn.LayerNorm(channels)
        self.attn = WindowAttention(channels, num_heads)
        self.norm2 = nn.LayerNorm(channels)
        self.mlp = Mlp(channels, mlp_ratio)

    def forward(self, x: torch.Tensor, prompts: Optional[torch.Tensor] = None) -> torch.Tensor:
        batch, dims = x.shape[0], tuple(x.shape[1:4])
        shortcut = x
        x = self.norm1(x)
        mask = None
        if self.shift:
            x = torch.roll(x, shifts=(-self.shift,) * 3, dims=(1, 2, 3))
            mask = shifted_window_mask(dims, self.window, self.shift).to(x)
        windows = window_partition(x, self.window)
        num_windows = windows.shape[0] // batch
        num_prompts = 0 if prompts is None else prompts.shape[1]
        if num_prompts:
            per_window = self.norm1(prompts).repeat_interleave(num_windows, dim=0)
            windows = torch.cat([per_window, windows], dim=1)
        if mask is not None:
            mask = F.pad(mask, (num_prompts, 0, num_prompts, 0)).repeat(batch, 1, 1).unsqueeze(1)
        attended = self.attn(windows, mask)[:, num_prompts:]
        x = window_reverse(attended, self.window, batch, dims)
        if self.shift:
            x = torch.roll(x, shifts=(self.shift,) * 3, dims=(1, 2, 3))
        x = shortcut + x
        return x + self.mlp(self.norm2(x))


class WindowStage(nn.Module):
    """Regular then shifted window block over one resolution level."""

    def __init__(self, layer_id: str, channels: int, num_heads: int, window: int, shift: int, mlp_ratio: float):
        super().__init__()
        self.layer_id = layer_id
        self.blocks = nn.ModuleList(
            [
                SwinBlock(channels, num_heads, window, 0, mlp_ratio),
                SwinBlock(channels, num_heads, window, shift, mlp_ratio),
            ]
        )

    def forward(self, sequence: torch.Tensor, num_prompts: int, spatial_dims) -> torch.Tensor:
        prompts = rearrange(sequence[:, :, :num_prompts], "b c n -> b n c") if num_prompts else None
        image = ImageTokenBlock(sequence[:, :, num_prompts:], spatial_dims).to_grid()
        x = rearrange(image, "b c d h w -> b d h w c")
        for block in self.blocks:
            x = block(x, prompts)
        x = rearrange(x, "b d h w c -> b c (d h w)")
        return torch.cat([sequence[:, :, :num_prompts], x], dim=-1)


class PatchMerging(nn.Module):
    """2x2x2 neighbourhood -> one token: LayerNorm(8C) then Linear(8C -> C_next)."""

    def __init__(self, channels: int, out_channels: int):
        super().__init__()
        self.norm = nn.LayerNorm(8 * channels)
        self.reduction = nn.Linear(8 * channels, out_channels, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = rearrange(x, "b c (d p1) (h p2) (w p3) -> b d h w (p1 p2 p3 c)", p1=2, p2=2, p3=2)
        x = self.reduction(self.norm(x))
        return rearrange(x, "b d h w c -> b c d h w")


def stage_windows(config: BackboneConfig) -> list[tuple[int, int]]:
    """
    (window, shift) per stage. A window covering the whole stage grid shrinks
    to the grid and is not shifted.
    """
    patch = config.resolved_patch_size()
    resolution = min(config.input_size) // patch
    windows = []
    for _ in config.stage_channels:
        window = min(config.window_size, resolution)
        windows.append((window, window // 2 if resolution > window else 0))
        resolution //= 2
    return windows


class BoundStage:
    """A WindowStage paired with the grid its image slots fold back into."""

    def __init__(self, stage: "WindowStage", spatial_dims):
        self.stage = stage
        self.layer_id = stage.layer_id
        self.spatial_dims = spatial_dims

    def __call__(self, sequence: torch.Tensor, num_prompts: int) -> torch.Tensor:
        return self.stage(sequence, num_prompts, self.spatial_dims)


class WindowedEncoder(nn.Module):
    def __init__(self, config: BackboneConfig):
        super().__init__()
        channels = list(config.stage_channels)
        patch = config.resolved_patch_size()
        self.patch_embed = nn.Conv3d(config.in_channels, channels[0], patch, stride=patch)
        self.stages = nn.ModuleList(
            WindowStage(f"stage{i + 1}", c, config.num_heads, w, s, config.mlp_ratio)
            for i, (c, (w, s)) in enumerate(zip(channels, stage_windows(config)))
        )
        self.merges = nn.ModuleList(PatchMerging(channels[i], channels[i + 1]) for i in range(len(channels) - 1))

    def forward(self, x: torch.Tensor, prompts: Optional[PromptState]) -> list[torch.Tensor]:
        grid = self.patch_embed(x)
        features = []
        for i, stage in enumerate(self.stages):
            block = ImageTokenBlock.from_grid(grid)
            grid = apply_layer(BoundStage(stage, block.spatial_dims), block, prompts).to_grid()
            features.append(grid)
            if i < len(self.merges):
                grid = self.merges[i](grid)
        return features


class WindowedDecoder(nn.Module):
    def __init__(self, config: BackboneConfig):
        super().__init__()
        channels = list(config.stage_channels)
        self.skips = nn.ModuleList(nn.Conv3d(c, c, 1) for c in channels[:-1])
        self.ups = nn.ModuleList(
            UpBlock(channels[i + 1], channels[i], channels[i], padding_mode=config.padding_mode)
            for i in range(len(channels) - 1)
        )
        self.input_skip = ConvBlock(config.in_channels, channels[0], config.padding_mode)
        self.final_up = UpBlock(
            channels[0], channels[0], channels[0], scale=config.resolved_patch_size(), padding_mode=config.padding_mode
        )
        self.head = nn.Conv3d(channels[0], config.num_classes, 1)

    def forward(self, x: torch.Tensor, features: list[torch.Tensor]) -> torch.Tensor:
        y = features[-1]
        for i in reversed(range(len(self.ups))):
            y = self.ups[i](y, self.skips[i](features[i]))
        y = self.final_up(y, self.input_skip(x))
        return self.head(y)


class WindowedAttentionNet(SegmentationModel):
    """Swin-UNETR-style network: shifted 3D window attention stages with patch merging."""

    def __init__(self, config: BackboneConfig):
        super().__init__(config)
        self.encoder = WindowedEncoder(config)
        self.decoder = WindowedDecoder(config)

    def layer_channels(self) -> dict[str, int]:
        return {stage.layer_id: c for stage, c in zip(self.encoder.stages, self.config.stage_channels)}

    def default_injection_layers(self) -> list[str]:
        return [stage.layer_id for stage in self.encoder.stages][-2:]

    def spatial_multiple(self) -> int:
        return self.config.resolved_patch_size() * 2 ** (len(self.config.stage_channels) - 1)

    def encode(self, x: torch.Tensor, prompts: Optional[PromptState]) -> list[torch.Tensor]:
        return self.encoder(x, prompts)

    def decode(self, x: torch.Tensor, features: list[torch.Tensor]) -> torch.Tensor:
        return self.decoder(x, features)
