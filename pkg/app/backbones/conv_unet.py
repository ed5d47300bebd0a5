import math
from typing import Optional

import torch
from torch import nn

from prompt import ImageTokenBlock, PromptState, apply_layer

from .base import SegmentationModel
from .blocks import ConvBlock, TokenMixer, UpBlock
from .models import BackboneConfig


class ConvStage(nn.Module):
    def __init__(self, layer_id: str, in_channels: int, out_channels: int, downsample: bool, padding_mode: str):
        super().__init__()
        self.layer_id = layer_id
        self.pool = nn.MaxPool3d(2) if downsample else nn.Identity()
        self.mixer = TokenMixer(layer_id, in_channels)
        self.convs = ConvBlock(in_channels, out_channels, padding_mode)

    def forward(self, x: torch.Tensor, prompts: Optional[PromptState] = None) -> torch.Tensor:
        block = apply_layer(self.mixer, ImageTokenBlock.from_grid(self.pool(x)), prompts)
        return self.convs(block.to_grid())


class ConvDecoder(nn.Module):
    def __init__(self, channels: list[int], num_classes: int, padding_mode: str):
        super().__init__()
        self.skips = nn.ModuleList(nn.Conv3d(c, c, 1) for c in channels[:-1])
        self.ups = nn.ModuleList(
            UpBlock(channels[i + 1], channels[i], channels[i], padding_mode=padding_mode)
            for i in range(len(channels) - 1)
        )
        self.head = nn.Conv3d(channels[0], num_classes, 1)

    def forward(self, features: list[torch.Tensor]) -> torch.Tensor:
        x = features[-1]
        for i in reversed(range(len(self.ups))):
            x = self.ups[i](x, self.skips[i](features[i]))
        return self.head(x)


class ConvUNet(SegmentationModel):
    """U-Net: one ConvStage per entry of ``stage_channels``, max-pool between stages."""

    def __init__(self, config: BackboneConfig):
        super().__init__(config)
        channels = list(config.stage_channels)
        inputs = [config.in_channels] + channels[:-1]
        self.encoder = nn.ModuleList(
            ConvStage(f"enc{i + 1}", inputs[i], channels[i], downsample=i > 0, padding_mode=config.padding_mode)
            for i in range(len(channels))
        )
        self.decoder = ConvDecoder(channels, config.num_classes, config.padding_mode)

    def layer_channels(self) -> dict[str, int]:
        return {stage.layer_id: stage.mixer.local.in_channels for stage in self.encoder}

    def default_injection_layers(self) -> list[str]:
        ids = [stage.layer_id for stage in self.encoder]
        return ids[len(ids) - math.ceil(len(ids) / 2) :]

    def spatial_multiple(self) -> int:
        return 2 ** (len(self.encoder) - 1)

    def encode(self, x: torch.Tensor, prompts: Optional[PromptState]) -> list[torch.Tensor]:
        features = []
        for stage in self.encoder:
            x = stage(x, prompts)
            features.append(x)
        return features

    def decode(self, x: torch.Tensor, features: list[torch.Tensor]) -> torch.Tensor:
        return self.decoder(features)
