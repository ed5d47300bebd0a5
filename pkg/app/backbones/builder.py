import logging
from typing import Iterable, Optional

import torch

from app.core.errors import BadConfig

from .base import SegmentationModel
from .conv_unet import ConvUNet
from .models import BackboneConfig, BackboneKind
from .patch_attention import PatchAttentionNet
from .windowed_attention import WindowedAttentionNet, stage_windows

log = logging.getLogger("kgpl")

PARTITIONS = ("encoder", "decoder", "prompt")

_MODELS = {
    BackboneKind.CONV_UNET: ConvUNet,
    BackboneKind.PATCH_ATTENTION: PatchAttentionNet,
    BackboneKind.WINDOWED_ATTENTION: WindowedAttentionNet,
}

# module attribute -> partition
_PREFIXES = {"encoder": "encoder", "decoder": "decoder", "prompts": "prompt"}


def _is_power_of_two(value: int) -> bool:
    return value >= 2 and value & (value - 1) == 0


def validate_config(config: BackboneConfig) -> None:
    channels = list(config.stage_channels)
    if not channels:
        raise BadConfig("stage_channels must not be empty")
    if any(b < a for a, b in zip(channels, channels[1:])):
        raise BadConfig(f"stage_channels must be non-decreasing, got {channels}")

    levels = len(channels) - 1
    patch = config.resolved_patch_size()
    size = tuple(config.input_size)

    if config.kind == BackboneKind.CONV_UNET:
        multiple = 2**levels
        if any(s % multiple for s in size):
            raise BadConfig(f"input {size} must be divisible by {multiple} for {len(channels)} stages")
        return

    if not _is_power_of_two(patch):
        raise BadConfig(f"patch size must be a power of two >= 2, got {patch}")
    if any(s % patch for s in size):
        raise BadConfig(f"patch size {patch} does not divide input {size}")

    if config.kind == BackboneKind.PATCH_ATTENTION:
        if config.hidden_size % config.num_heads:
            raise BadConfig(f"hidden_size {config.hidden_size} not divisible by {config.num_heads} heads")
        return

    multiple = patch * 2**levels
    if any(s % multiple for s in size):
        raise BadConfig(f"input {size} must be divisible by {multiple} (patch x 2^merges)")
    for c in channels:
        if c % config.num_heads:
            raise BadConfig(f"stage width {c} not divisible by {config.num_heads} heads")
    grid = [s // patch for s in size]
    for i, (window, _) in enumerate(stage_windows(config)):
        if any(g % window for g in grid):
            raise BadConfig(f"window {window} does not divide stage {i + 1} grid {tuple(grid)}")
        grid = [g // 2 for g in grid]


def build(config: BackboneConfig) -> SegmentationModel:
    """Validate ``config`` and build its model; weights depend only on ``config.seed``."""
    validate_config(config)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        model = _MODELS[config.kind](config)
    log.info(
        "built %s: encoder=%d decoder=%d parameters",
        config.kind.value,
        count_parameters(model, "encoder"),
        count_parameters(model, "decoder"),
    )
    return model


def partition_of(name: str) -> str:
    head = name.split(".", 1)[0]
    if head not in _PREFIXES:
        raise BadConfig(f"parameter {name!r} belongs to no partition")
    return _PREFIXES[head]


def partition_parameters(model: SegmentationModel) -> dict[str, set[str]]:
    """Parameter names grouped into encoder, decoder and prompt."""
    groups = {name: set() for name in PARTITIONS}
    for name, _ in model.named_parameters():
        groups[partition_of(name)].add(name)
    return groups


def count_parameters(
    model: SegmentationModel, partition: Optional[str] = None, trainable_only: bool = False
) -> int:
    total = 0
    for name, param in model.named_parameters():
        if partition is not None and partition_of(name) != partition:
            continue
        if trainable_only and not param.requires_grad:
            continue
        total += param.numel()
    return total


def set_trainable(model: SegmentationModel, partitions: Iterable[str]) -> None:
    """Enable gradients on ``partitions`` only; everything else is frozen."""
    wanted = set(partitions)
    unknown = wanted - set(PARTITIONS)
    if unknown:
        raise BadConfig(f"unknown partitions {sorted(unknown)}")
    for name, param in model.named_parameters():
        param.requires_grad_(partition_of(name) in wanted)


def trainable_partitions(model: SegmentationModel) -> dict[str, bool]:
    """Partition -> whether any of its parameters is trainable."""
    flags = {name: False for name in PARTITIONS}
    for name, param in model.named_parameters():
        flags[partition_of(name)] |= param.requires_grad
    return flags
