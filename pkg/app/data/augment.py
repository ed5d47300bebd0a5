from typing import Optional, Protocol, Sequence, Tuple

import numpy as np

from app.core.models import LabelMap, Volume

from .models import Sample

FLIP_PROBABILITY = 0.5


class UniformSource(Protocol):
    """Anything with numpy's ``random(size)`` (a ``np.random.Generator`` in practice)."""

    def random(self, size: int) -> np.ndarray: ...


def draw_flip_axes(rng: UniformSource) -> Tuple[bool, bool, bool]:
    draws = np.asarray(rng.random(3))
    return tuple(bool(d < FLIP_PROBABILITY) for d in draws)


def _flip(array: np.ndarray, axes: Sequence[bool]) -> np.ndarray:
    dims = tuple(i for i, flag in enumerate(axes) if flag)
    return np.flip(array, axis=dims) if dims else array


def augment_flip(sample: Sample, rng: UniformSource, axes: Optional[Sequence[bool]] = None) -> Sample:
    """Flip each axis with probability 0.5; image and both label maps flip together."""
    axes = tuple(axes) if axes is not None else draw_flip_axes(rng)
    if not any(axes):
        return sample
    return sample.model_copy(
        update={
            "volume": Volume(data=_flip(sample.volume.data, axes), spacing=sample.volume.spacing, origin=sample.volume.origin),
            "tissue": _flip_labels(sample.tissue, axes),
            "structure": _flip_labels(sample.structure, axes),
        }
    )


def _flip_labels(label_map: LabelMap, axes: Sequence[bool]) -> LabelMap:
    return LabelMap(
        data=_flip(label_map.data, axes),
        num_classes=label_map.num_classes,
        spacing=label_map.spacing,
        origin=label_map.origin,
    )
