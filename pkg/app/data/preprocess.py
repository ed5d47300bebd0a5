from typing import Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from app.core.errors import EmptyForeground, ShapeMismatch
from app.core.models import GridModel, LabelMap, Volume

from .models import Sample


class CropWindow(BaseModel):
    """Start index (may be negative) and size of a crop, per axis."""

    start: Tuple[int, int, int]
    size: Tuple[int, int, int]


def foreground_window(volume: Volume, crop: Sequence[int]) -> CropWindow:
    """Window of size ``crop`` centred on the bounding box of nonzero intensities."""
    if len(crop) != 3 or any(c < 1 for c in crop):
        raise ShapeMismatch(f"crop must be three positive sizes, got {tuple(crop)}")
    nonzero = np.argwhere(volume.data != 0)
    if nonzero.size == 0:
        raise EmptyForeground("volume has no nonzero voxels")
    lo, hi = nonzero.min(axis=0), nonzero.max(axis=0)
    centre = (lo + hi + 1) // 2
    start = tuple(int(c - s // 2) for c, s in zip(centre, crop))
    return CropWindow(start=start, size=tuple(int(s) for s in crop))


def apply_window(array: np.ndarray, window: CropWindow) -> np.ndarray:
    """Crop ``array`` to ``window``, zero-padding wherever the window leaves the grid."""
    out = np.zeros(window.size, dtype=array.dtype)
    src, dst = [], []
    for start, size, extent in zip(window.start, window.size, array.shape):
        lo, hi = max(start, 0), min(start + size, extent)
        if hi <= lo:
            return out
        src.append(slice(lo, hi))
        dst.append(slice(lo - start, hi - start))
    out[tuple(dst)] = array[tuple(src)]
    return out


def _cropped_geometry(grid: GridModel, window: CropWindow) -> dict:
    origin = tuple(o + s * d for o, s, d in zip(grid.origin, window.start, grid.spacing))
    return {"spacing": grid.spacing, "origin": origin}


def zscore_foreground(data: np.ndarray) -> np.ndarray:
    """Mean 0, sd 1 over nonzero voxels; background stays 0."""
    foreground = data != 0
    values = data[foreground].astype(np.float64)
    spread = values.std()
    if spread == 0:
        raise EmptyForeground("foreground intensities are constant")
    out = np.zeros(data.shape, dtype=np.float64)
    out[foreground] = (values - values.mean()) / spread
    return out.astype(data.dtype)


def crop_volume(volume: Volume, window: CropWindow) -> Volume:
    return Volume(data=apply_window(volume.data, window), **_cropped_geometry(volume, window))


def crop_label_map(label_map: LabelMap, window: CropWindow) -> LabelMap:
    return LabelMap(
        data=apply_window(label_map.data, window),
        num_classes=label_map.num_classes,
        **_cropped_geometry(label_map, window),
    )


def preprocess(volume: Volume, crop: Sequence[int]) -> Volume:
    """Foreground-centred crop/pad to ``crop``, then z-score over the foreground."""
    window = foreground_window(volume, crop)
    cropped = crop_volume(volume, window)
    return Volume(data=zscore_foreground(cropped.data), spacing=cropped.spacing, origin=cropped.origin)


def preprocess_sample(sample: Sample, crop: Sequence[int]) -> Sample:
    """``preprocess`` on the image; the same window applied to both label maps."""
    window = foreground_window(sample.volume, crop)
    cropped = crop_volume(sample.volume, window)
    return sample.model_copy(
        update={
            "volume": Volume(data=zscore_foreground(cropped.data), spacing=cropped.spacing, origin=cropped.origin),
            "tissue": crop_label_map(sample.tissue, window),
            "structure": crop_label_map(sample.structure, window),
        }
    )


def normalize_sample(sample: Sample) -> Sample:
    """Foreground z-score on the full grid, labels untouched."""
    volume = sample.volume
    return sample.model_copy(
        update={"volume": Volume(data=zscore_foreground(volume.data), spacing=volume.spacing, origin=volume.origin)}
    )
