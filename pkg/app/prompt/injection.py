import math
from typing import Mapping, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
import torch

from app.core.errors import BadConfig, ChannelMismatch, ShapeMismatch
from knowledge.models import KnowledgeEmbedding

from .models import ImageTokenBlock, InjectionRecord, PromptConfig, PromptState


class EncoderLayer(Protocol):
    """An encoder layer acting on a (B, C, N+S) sequence whose first N slots are prompts."""

    layer_id: str

    def __call__(self, sequence: torch.Tensor, num_prompts: int) -> torch.Tensor: ...


def init_prompts(config: PromptConfig, layer_channels: Mapping[str, int]) -> PromptState:
    layers = config.injection_layers
    if not layers:
        raise BadConfig("at least one injection layer is required")
    if config.path is None:
        raise BadConfig("prompt projection path is not set")
    unknown = [lid for lid in layers if lid not in layer_channels]
    if unknown:
        raise BadConfig(f"unknown injection layers {unknown}; encoder has {list(layer_channels)}")
    ordered = {lid: layer_channels[lid] for lid in layer_channels if lid in layers}
    return PromptState(ordered, config.num_tokens, config.hidden_dim, config.path, seed=config.seed)


def preinitialize(
    state: PromptState, emb: Union[KnowledgeEmbedding, np.ndarray, torch.Tensor]
) -> PromptState:
    """Add the knowledge embedding onto every layer's tokens."""
    block = emb.tokens if isinstance(emb, KnowledgeEmbedding) else emb
    if not torch.is_tensor(block):
        block = torch.from_numpy(np.array(block))
    expected = (state.num_tokens, state.hidden_dim)
    if tuple(block.shape) != expected:
        raise ShapeMismatch(f"embedding shape {tuple(block.shape)} != prompt shape {expected}")
    with torch.no_grad():
        for tokens in state.tokens.values():
            tokens.add_(block.to(dtype=tokens.dtype, device=tokens.device))
    return state


def randomize_prompts(state: PromptState, seed: int = 0) -> PromptState:
    """Replace tokens by seeded xavier-uniform values (random-prompt baseline)."""
    generator = torch.Generator().manual_seed(seed)
    bound = math.sqrt(6.0 / (state.num_tokens + state.hidden_dim))
    with torch.no_grad():
        for tokens in state.tokens.values():
            fresh = torch.empty(tokens.shape).uniform_(-bound, bound, generator=generator)
            tokens.copy_(fresh)
    return state


def inject(image: ImageTokenBlock, prompt_block: torch.Tensor) -> Tuple[torch.Tensor, InjectionRecord]:
    """Concatenate (B, C, N) prompts in front of (B, C, S) image tokens."""
    if prompt_block.dim() != 3 or prompt_block.shape[0] != image.data.shape[0]:
        raise ShapeMismatch(
            f"prompt block {tuple(prompt_block.shape)} does not match image batch {tuple(image.data.shape)}"
        )
    if prompt_block.shape[1] != image.data.shape[1]:
        raise ChannelMismatch(
            f"prompt channels {prompt_block.shape[1]} != image channels {image.data.shape[1]}"
        )
    joined = torch.cat([prompt_block.to(image.data.dtype), image.data], dim=-1)
    return joined, InjectionRecord(num_prompts=int(prompt_block.shape[-1]), spatial_dims=image.spatial_dims)


def discard(output: torch.Tensor, record: InjectionRecord) -> ImageTokenBlock:
    """Drop the prompt slots and restore the image block."""
    if output.dim() != 3 or record.num_prompts > output.shape[-1]:
        raise ShapeMismatch(
            f"cannot discard {record.num_prompts} prompt slots from {tuple(output.shape)}"
        )
    image = output[:, :, record.num_prompts :]
    if image.shape[-1] != math.prod(record.spatial_dims):
        raise ShapeMismatch(
            f"{image.shape[-1]} image slots left, spatial dims {record.spatial_dims} need "
            f"{math.prod(record.spatial_dims)}"
        )
    return ImageTokenBlock(image, record.spatial_dims)


def apply_layer(layer: EncoderLayer, block: ImageTokenBlock, state: Optional[PromptState] = None) -> ImageTokenBlock:
    """One step of [X_{i+1}, _] = L_i([P_i, X_i]); plain L_i(X_i) when the layer has no prompts."""
    if state is not None and layer.layer_id in state.tokens:
        prompts = state.project(layer.layer_id, block.data.shape[0])
        joined, record = inject(block, prompts)
        return discard(layer(joined, record.num_prompts), record)
    return discard(layer(block.data, 0), InjectionRecord(num_prompts=0, spatial_dims=block.spatial_dims))


def propagate(
    layers: Sequence[EncoderLayer],
    state: Optional[PromptState],
    x0: ImageTokenBlock,
    return_all: bool = False,
):
    """
    Run ``layers`` in order, injecting fresh prompts before each configured
    layer and discarding their outputs after it. Prompt outputs are never
    carried to the next layer.
    """
    if state is not None:
        known = {layer.layer_id for layer in layers}
        missing = [lid for lid in state.injection_layers if lid not in known]
        if missing:
            raise BadConfig(f"injection layers {missing} are not encoder layers")
    x = x0
    history = []
    for layer in layers:
        x = apply_layer(layer, x, state)
        history.append(x)
    return (x, history) if return_all else x
