import torch
from einops import rearrange
from torch import nn


class ConvBlock(nn.Sequential):
    """Two 3x3x3 convolutions, each followed by instance norm and LeakyReLU."""

    def __init__(self, in_channels: int, out_channels: int, padding_mode: str = "zeros"):
        super().__init__(
            nn.Conv3d(in_channels, out_channels, 3, padding=1, padding_mode=padding_mode),
            nn.InstanceNorm3d(out_channels, affine=True),
            nn.LeakyReLU(0.01),
            nn.Conv3d(out_channels, out_channels, 3, padding=1, padding_mode=padding_mode),
            nn.InstanceNorm3d(out_channels, affine=True),
            nn.LeakyReLU(0.01),
        )


class TokenMixer(nn.Module):
    """
    Interaction layer for convolutional stages, acting on a (B, C, N+S)
    sequence: a pointwise convolution per slot plus a pointwise projection of
    the sequence mean added to every slot. Prompt slots reach the image slots
    through the mean.
    """

    def __init__(self, layer_id: str, channels: int):
        super().__init__()
        self.layer_id = layer_id
        self.local = nn.Conv1d(channels, channels, 1)
        self.context = nn.Conv1d(channels, channels, 1)

    def forward(self, sequence: torch.Tensor, num_prompts: int = 0) -> torch.Tensor:
        context = self.context(sequence.mean(dim=-1, keepdim=True))
        return sequence + self.local(sequence) + context


class Mlp(nn.Sequential):
    def __init__(self, channels: int, ratio: float):
        hidden = max(1, int(channels * ratio))
        super().__init__(nn.Linear(channels, hidden), nn.GELU(), nn.Linear(hidden, channels))


class TransformerLayer(nn.Module):
    """Pre-norm transformer block over a (B, C, L) sequence; all L slots attend to each other."""

    def __init__(self, layer_id: str, hidden_size: int, num_heads: int, mlp_ratio: float):
        super().__init__()
        self.layer_id = layer_id
        self.norm1 = nn.LayerNorm(hidden_size)
        self.attn = nn.MultiheadAttention(hidden_size, num_heads, batch_first=True)
        self.norm2 = nn.LayerNorm(hidden_size)
        self.mlp = Mlp(hidden_size, mlp_ratio)

    def forward(self, sequence: torch.Tensor, num_prompts: int = 0) -> torch.Tensor:
        x = rearrange(sequence, "b c l -> b l c")
        h = self.norm1(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        x = x + self.mlp(self.norm2(x))
        return rearrange(x, "b l c -> b c l")


class UpBlock(nn.Module):
    """Transposed-conv upsampling, concatenation with a skip feature, ConvBlock."""

    def __init__(self, in_channels: int, skip_channels: int, out_channels: int, scale: int = 2, padding_mode: str = "zeros"):
        super().__init__()
        self.up = nn.ConvTranspose3d(in_channels, out_channels, scale, stride=scale)
        self.block = ConvBlock(out_channels + skip_channels, out_channels, padding_mode)

    def forward(self, x: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        return self.block(torch.cat([self.up(x), skip], dim=1))
