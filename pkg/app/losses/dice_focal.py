from functools import partial
from typing import Callable, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F

from app.core.errors import BadConfig, InvalidLabel, ShapeMismatch
from app.core.models import LabelMap

from .models import LossConfig, LossName

Target = Union[torch.Tensor, np.ndarray, LabelMap, Sequence[LabelMap]]
LossFn = Callable[[torch.Tensor, Target, LossConfig], torch.Tensor]


def as_target(target: Target, device=None) -> torch.Tensor:
    """Class indices as a (B, *spatial) int64 tensor."""
    if isinstance(target, LabelMap):
        target = target.data[None]
    elif isinstance(target, (list, tuple)):
        target = np.stack([t.data for t in target])
    if not torch.is_tensor(target):
        target = torch.from_numpy(np.asarray(target).astype(np.int64))
    return target.to(device=device, dtype=torch.int64)


def _one_hot_target(probs: torch.Tensor, target: Target) -> torch.Tensor:
    labels = as_target(target, probs.device)
    if probs.dim() < 3 or tuple(labels.shape) != (probs.shape[0], *probs.shape[2:]):
        raise ShapeMismatch(
            f"probabilities {tuple(probs.shape)} do not match target {tuple(labels.shape)}"
        )
    num_classes = probs.shape[1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= num_classes):
        raise InvalidLabel(f"target labels outside [0, {num_classes})")
    return torch.movedim(F.one_hot(labels, num_classes), -1, 1).to(probs.dtype)


def dice_loss(probs: torch.Tensor, target: Target, cfg: LossConfig = LossConfig()) -> torch.Tensor:
    """
    Soft Dice loss averaged over classes and batch. A class absent from both
    prediction and target contributes 0.
    """
    truth = _one_hot_target(probs, target)
    dims = tuple(range(2, probs.dim()))
    intersection = (probs * truth).sum(dims)
    denominator = probs.sum(dims) + truth.sum(dims)
    ratio = torch.where(
        denominator + cfg.smooth > 0,
        (2 * intersection + cfg.smooth) / (denominator + cfg.smooth).clamp_min(torch.finfo(probs.dtype).tiny),
        torch.ones_like(denominator),
    )
    per_class = 1 - ratio
    if not cfg.include_background:
        if probs.shape[1] < 2:
            raise BadConfig("excluding background needs at least two classes")
        per_class = per_class[:, 1:]
    return per_class.mean()


def focal_term(probs: torch.Tensor, target: Target, cfg: LossConfig = LossConfig()) -> torch.Tensor:
    """Voxel mean of alpha * (1 - p_t)^gamma * -log(p_t)."""
    truth = _one_hot_target(probs, target)
    p_t = (probs * truth).sum(1).clamp(cfg.clamp_min, 1.0)
    tiny = torch.finfo(probs.dtype).tiny
    weight = (1 - p_t).clamp_min(tiny) ** cfg.gamma
    return (cfg.alpha * weight * -torch.log(p_t)).mean()


def combined_loss(probs: torch.Tensor, target: Target, cfg: LossConfig = LossConfig()) -> torch.Tensor:
    return dice_loss(probs, target, cfg) + focal_term(probs, target, cfg)


_STAGE_LOSSES = {
    "tissue": (LossName.DICE, dice_loss),
    "structure": (LossName.DICE_FOCAL, combined_loss),
}


def loss_name(stage: str) -> LossName:
    if stage not in _STAGE_LOSSES:
        raise BadConfig(f"unknown stage {stage!r}, expected one of {sorted(_STAGE_LOSSES)}")
    return _STAGE_LOSSES[stage][0]


def loss_for_stage(stage: str, cfg: LossConfig = LossConfig()) -> Callable[[torch.Tensor, Target], torch.Tensor]:
    """Tissue models train on Dice alone, structure models on Dice + focal."""
    loss_name(stage)
    return partial(_STAGE_LOSSES[stage][1], cfg=cfg)
