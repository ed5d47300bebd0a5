from typing import Optional

import torch
from torch import nn

from app.core.errors import ShapeMismatch
from prompt import ImageTokenBlock, ProjectionPath, PromptState, propagate

from .base import SegmentationModel, downsampling_levels
from .blocks import ConvBlock, TransformerLayer, UpBlock
from .models import BackboneConfig


class PatchAttentionEncoder(nn.Module):
    def __init__(self, config: BackboneConfig):
        super().__init__()
        patch = config.resolved_patch_size()
        self.grid = tuple(s // patch for s in config.input_size)
        tokens = self.grid[0] * self.grid[1] * self.grid[2]
        self.patch_embed = nn.Conv3d(config.in_channels, config.hidden_size, patch, stride=patch)
        self.pos_embed = nn.Parameter(torch.zeros(1, config.hidden_size, tokens))
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        self.blocks = nn.ModuleList(
            TransformerLayer(f"block{i + 1}", config.hidden_size, config.num_heads, config.mlp_ratio)
            for i in range(config.num_blocks)
        )
        self.norm = nn.LayerNorm(config.hidden_size)

    def forward(self, x: torch.Tensor, prompts: Optional[PromptState]) -> list[torch.Tensor]:
        embedded = ImageTokenBlock.from_grid(self.patch_embed(x))
        embedded = ImageTokenBlock(embedded.data + self.pos_embed, embedded.spatial_dims)
        _, history = propagate(self.blocks, prompts, embedded, return_all=True)
        hidden = [block.to_grid() for block in history]
        last = history[-1]
        normed = self.norm(last.data.transpose(1, 2)).transpose(1, 2)
        hidden[-1] = ImageTokenBlock(normed, last.spatial_dims).to_grid()
        return hidden


class ProjectUp(nn.Sequential):
    """Transformer hidden grid -> skip feature, upsampled ``levels`` times."""

    def __init__(self, in_channels: int, out_channels: int, levels: int):
        layers = []
        for i in range(levels):
            layers.append(nn.ConvTranspose3d(in_channels if i == 0 else out_channels, out_channels, 2, stride=2))
        super().__init__(*layers)


class PatchAttentionDecoder(nn.Module):
    def __init__(self, config: BackboneConfig, num_blocks: int):
        super().__init__()
        features = config.stage_channels[0]
        self.levels = downsampling_levels(config.resolved_patch_size())
        # transformer block (1-based) feeding the skip at each intermediate level
        self.skip_blocks = [max(1, round(k * num_blocks / self.levels)) for k in range(1, self.levels)]
        self.input_skip = ConvBlock(config.in_channels, features, config.padding_mode)
        self.hidden_skips = nn.ModuleList(
            ProjectUp(config.hidden_size, features, k) for k in range(1, self.levels)
        )
        self.ups = nn.ModuleList(
            UpBlock(config.hidden_size if k == 0 else features, features, features, padding_mode=config.padding_mode)
            for k in range(self.levels)
        )
        self.head = nn.Conv3d(features, config.num_classes, 1)

    def forward(self, x: torch.Tensor, hidden: list[torch.Tensor]) -> torch.Tensor:
        skips = [proj(hidden[b - 1]) for proj, b in zip(self.hidden_skips, self.skip_blocks)]
        skips.append(self.input_skip(x))
        y = hidden[-1]
        for up, skip in zip(self.ups, skips):
            y = up(y, skip)
        return self.head(y)


class PatchAttentionNet(SegmentationModel):
    """
    UNETR-style network: non-overlapping patch embedding, a stack of
    transformer blocks over the S patch tokens, convolutional decoder fed by
    projected hidden states.
    """

    default_path = ProjectionPath.TRANSPOSE_LINEAR

    def __init__(self, config: BackboneConfig):
        super().__init__(config)
        self.encoder = PatchAttentionEncoder(config)
        self.decoder = PatchAttentionDecoder(config, config.num_blocks)

    def layer_channels(self) -> dict[str, int]:
        return {block.layer_id: self.config.hidden_size for block in self.encoder.blocks}

    def default_injection_layers(self) -> list[str]:
        return [block.layer_id for block in self.encoder.blocks][-2:]

    def check_input(self, x: torch.Tensor) -> None:
        super().check_input(x)
        if tuple(x.shape[2:]) != tuple(self.config.input_size):
            raise ShapeMismatch(
                f"patch_attention was built for {tuple(self.config.input_size)}, got {tuple(x.shape[2:])}"
            )

    def encode(self, x: torch.Tensor, prompts: Optional[PromptState]) -> list[torch.Tensor]:
        return self.encoder(x, prompts)

    def decode(self, x: torch.Tensor, features: list[torch.Tensor]) -> torch.Tensor:
        return self.decoder(x, features)
