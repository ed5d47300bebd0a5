import math
from typing import Optional

import torch
from einops import rearrange
from torch import nn

from app.core.errors import ChannelMismatch, ShapeMismatch


def _seeded_uniform(shape, fan_in: int, generator: Optional[torch.Generator]) -> torch.Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return torch.empty(shape).uniform_(-bound, bound, generator=generator)


def _check_tokens(tokens: torch.Tensor) -> None:
    if tokens.dim() != 3:
        raise ShapeMismatch(f"prompt tokens must be (B, N, D), got {tuple(tokens.shape)}")


class AAPProjection(nn.Module):
    """
    (B, N, D) -> (B, N, 1) by adaptive average pooling over D, then
    out[b, c, n] = W[c, n] * pooled[b, n] + bias[c].

    Each output column stays tied to one prompt token; there is no mixing
    across tokens.
    """

    def __init__(self, num_tokens: int, channels: int, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.num_tokens = num_tokens
        self.channels = channels
        self.pool = nn.AdaptiveAvgPool1d(1)
        self.weight = nn.Parameter(_seeded_uniform((channels, num_tokens), num_tokens, generator))
        self.bias = nn.Parameter(torch.zeros(channels))

    def pooled(self, tokens: torch.Tensor) -> torch.Tensor:
        return self.pool(tokens)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        _check_tokens(tokens)
        if tokens.shape[1] != self.num_tokens:
            raise ShapeMismatch(f"expected {self.num_tokens} tokens, got {tokens.shape[1]}")
        pooled = rearrange(self.pooled(tokens), "b n 1 -> b 1 n")
        return self.weight.unsqueeze(0) * pooled + self.bias[None, :, None]


class TransposeProjection(nn.Module):
    """
    (B, N, D) -> (D, N, B) -> linear D -> C on the leading axis -> (C, N, B)
    -> inverse transpose -> (B, C, N).
    """

    def __init__(self, hidden_dim: int, channels: int, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.hidden_dim = hidden_dim
        self.channels = channels
        self.weight = nn.Parameter(_seeded_uniform((channels, hidden_dim), hidden_dim, generator))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        _check_tokens(tokens)
        if tokens.shape[2] != self.hidden_dim:
            raise ShapeMismatch(f"expected hidden size {self.hidden_dim}, got {tokens.shape[2]}")
        transposed = rearrange(tokens, "b n d -> d n b")
        mapped = torch.einsum("dnb,cd->cnb", transposed, self.weight) + self.bias[:, None, None]
        return rearrange(mapped, "c n b -> b c n")


def project_aap(tokens: torch.Tensor, target_channels: int, proj: AAPProjection) -> torch.Tensor:
    if proj.channels != target_channels:
        raise ChannelMismatch(f"projection emits {proj.channels} channels, need {target_channels}")
    return proj(tokens)


def project_transpose(tokens: torch.Tensor, target_channels: int, proj: TransposeProjection) -> torch.Tensor:
    if proj.channels != target_channels:
        raise ChannelMismatch(f"projection emits {proj.channels} channels, need {target_channels}")
    return proj(tokens)
