import math
from typing import Dict, List, Sequence, TypeVar

import numpy as np

from app.core.errors import BadRatios

T = TypeVar("T")

SPLIT_NAMES = ("train", "val", "test")
DEFAULT_RATIOS = (0.8, 0.1, 0.1)


def split_sizes(total: int, ratios: Sequence[float]) -> List[int]:
    """Floors of the exact proportions, leftovers to the largest remainders (earlier split wins ties)."""
    if len(ratios) != len(SPLIT_NAMES) or any(r < 0 or not math.isfinite(r) for r in ratios):
        raise BadRatios(f"need {len(SPLIT_NAMES)} non-negative ratios, got {list(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"ratios must sum to 1, got {sum(ratios)}")
    exact = [total * r for r in ratios]
    sizes = [int(math.floor(e)) for e in exact]
    order = sorted(range(len(exact)), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in order[: total - sum(sizes)]:
        sizes[i] += 1
    return sizes


def split(dataset: Sequence[T], ratios: Sequence[float] = DEFAULT_RATIOS, seed: int = 0) -> Dict[str, List[T]]:
    """Seeded shuffle cut into train/val/test."""
    sizes = split_sizes(len(dataset), ratios)
    order = np.random.default_rng(seed).permutation(len(dataset))
    parts, start = {}, 0
    for name, size in zip(SPLIT_NAMES, sizes):
        parts[name] = [dataset[int(i)] for i in order[start : start + size]]
        start += size
    return parts
