import math
from abc import ABC, abstractmethod
from typing import Optional

import torch
from torch import nn

from app.core.errors import ShapeMismatch
from prompt import ProjectionPath, PromptConfig, PromptState, init_prompts

from .models import BackboneConfig


class SegmentationModel(nn.Module, ABC):
    """
    Encoder-decoder segmentation network with prompt hook points.

    Subclasses put every encoder parameter under ``self.encoder`` and every
    decoder parameter (skip-connection convolutions included) under
    ``self.decoder``; attached prompts live under ``self.prompts``.
    """

    default_path: ProjectionPath = ProjectionPath.AAP_LINEAR

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        self.prompts: Optional[PromptState] = None

    # hooks
    @abstractmethod
    def layer_channels(self) -> dict[str, int]:
        """Encoder layer id -> channel count C of the image tokens entering it."""

    @abstractmethod
    def default_injection_layers(self) -> list[str]: ...

    @abstractmethod
    def encode(self, x: torch.Tensor, prompts: Optional[PromptState]) -> list[torch.Tensor]: ...

    @abstractmethod
    def decode(self, x: torch.Tensor, features: list[torch.Tensor]) -> torch.Tensor: ...

    def spatial_multiple(self) -> int:
        return 1

    # prompts
    def attach_prompts(self, config: PromptConfig) -> PromptState:
        resolved = config.model_copy(
            update={
                "injection_layers": config.injection_layers or self.default_injection_layers(),
                "path": config.path or self.default_path,
            }
        )
        self.prompts = init_prompts(resolved, self.layer_channels())
        return self.prompts

    def detach_prompts(self) -> None:
        self.prompts = None

    def check_input(self, x: torch.Tensor) -> None:
        if x.dim() != 5 or x.shape[1] != self.config.in_channels:
            raise ShapeMismatch(
                f"expected (B, {self.config.in_channels}, X, Y, Z) input, got {tuple(x.shape)}"
            )
        multiple = self.spatial_multiple()
        if any(s % multiple for s in x.shape[2:]):
            raise ShapeMismatch(f"input dims {tuple(x.shape[2:])} must be multiples of {multiple}")

    def forward(self, x: torch.Tensor, prompts: Optional[PromptState] = None) -> torch.Tensor:
        self.check_input(x)
        features = self.encode(x, prompts if prompts is not None else self.prompts)
        return self.decode(x, features)


def downsampling_levels(size: int) -> int:
    return int(round(math.log2(size)))
