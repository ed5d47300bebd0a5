import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Optional, Tuple

import torch
from pydantic import BaseModel, PositiveInt
from torch import nn

from app.core.errors import BadConfig, ShapeMismatch
from app.core.models import TensorShape3

from .projection import AAPProjection, TransposeProjection


class ProjectionPath(str, Enum):
    AAP_LINEAR = "aap_linear"
    TRANSPOSE_LINEAR = "transpose_linear"


class PromptConfig(BaseModel):
    num_tokens: PositiveInt = 32
    hidden_dim: PositiveInt = 768
    # None -> the backbone's deep-layer default
    injection_layers: Optional[list[str]] = None
    path: Optional[ProjectionPath] = None
    seed: int = 0


@dataclass(frozen=True)
class ImageTokenBlock:
    """Image embeddings flattened to (B, C, S) with S = L * W * H."""

    data: torch.Tensor
    spatial_dims: Tuple[int, ...]

    def __post_init__(self):
        if self.data.dim() != 3:
            raise ShapeMismatch(f"image block must be (B, C, S), got {tuple(self.data.shape)}")
        if self.data.shape[-1] != math.prod(self.spatial_dims):
            raise ShapeMismatch(
                f"sequence length {self.data.shape[-1]} != prod{tuple(self.spatial_dims)}"
            )

    @classmethod
    def from_grid(cls, grid: torch.Tensor) -> "ImageTokenBlock":
        spatial = tuple(int(s) for s in grid.shape[2:])
        return cls(grid.flatten(2), spatial)

    def to_grid(self) -> torch.Tensor:
        return self.data.reshape(*self.data.shape[:2], *self.spatial_dims)

    @property
    def shape(self) -> TensorShape3:
        b, c, s = self.data.shape
        return TensorShape3(batch=b, middle=c, last=s)


@dataclass(frozen=True)
class InjectionRecord:
    num_prompts: int
    spatial_dims: Tuple[int, ...]


class PromptState(nn.Module):
    """
    Learnable prompt tokens, one (N, D) block and one projection per
    injection layer. Tokens start at zero.
    """

    def __init__(
        self,
        layer_channels: Mapping[str, int],
        num_tokens: int,
        hidden_dim: int,
        path: ProjectionPath,
        seed: int = 0,
    ):
        super().__init__()
        if not layer_channels:
            raise BadConfig("prompt state needs at least one injection layer")
        if num_tokens < 1 or hidden_dim < 1:
            raise BadConfig(f"N and D must be >= 1, got N={num_tokens}, D={hidden_dim}")
        self.injection_layers = list(layer_channels)
        self.path = ProjectionPath(path)
        self.num_tokens = int(num_tokens)
        self.hidden_dim = int(hidden_dim)

        generator = torch.Generator().manual_seed(seed)
        self.tokens = nn.ParameterDict(
            {lid: nn.Parameter(torch.zeros(num_tokens, hidden_dim)) for lid in self.injection_layers}
        )
        projections = {}
        for lid, channels in layer_channels.items():
            if self.path == ProjectionPath.AAP_LINEAR:
                projections[lid] = AAPProjection(num_tokens, channels, generator=generator)
            else:
                projections[lid] = TransposeProjection(hidden_dim, channels, generator=generator)
        self.projections = nn.ModuleDict(projections)

    def channels(self, layer_id: str) -> int:
        return self.projections[layer_id].channels

    def project(self, layer_id: str, batch: int) -> torch.Tensor:
        """Layer's tokens broadcast over the batch and reshaped to (B, C, N)."""
        tokens = self.tokens[layer_id].unsqueeze(0).expand(batch, -1, -1)
        return self.projections[layer_id](tokens)
