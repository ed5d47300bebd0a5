import math
from typing import Iterable, Optional

import torch
from torch.optim.lr_scheduler import LambdaLR

from .models import TrainConfig


def warmup_steps_for(total_steps: int, cfg: TrainConfig) -> int:
    """Warmup length in steps: the warmup epochs' share of ``total_steps``."""
    return min(total_steps, int(round(total_steps * cfg.warmup_epochs / cfg.max_epochs)))


def lr_at(step: int, total_steps: int, cfg: TrainConfig, warmup_steps: Optional[int] = None) -> float:
    """Linear ramp 0 -> lr over the warmup, then cosine decay lr -> 0 at ``total_steps``."""
    warmup = warmup_steps_for(total_steps, cfg) if warmup_steps is None else warmup_steps
    step = min(max(step, 0), total_steps)
    if step < warmup:
        return cfg.lr * step / warmup
    if total_steps == warmup:
        return cfg.lr
    progress = (step - warmup) / (total_steps - warmup)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def build_optimizer(params: Iterable[torch.nn.Parameter], cfg: TrainConfig) -> torch.optim.AdamW:
    trainable = [p for p in params if p.requires_grad]
    return torch.optim.AdamW(trainable, lr=cfg.lr, weight_decay=cfg.weight_decay)


def build_scheduler(optimizer: torch.optim.Optimizer, total_steps: int, cfg: TrainConfig) -> LambdaLR:
    """Per-step schedule; the k-th update (1-based) runs at ``lr_at(k)``."""
    warmup = warmup_steps_for(total_steps, cfg)
    return LambdaLR(optimizer, lambda step: lr_at(step + 1, total_steps, cfg, warmup) / cfg.lr)
