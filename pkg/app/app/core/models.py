from enum import Enum
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, field_validator

from .errors import InvalidLabel, NonFinite, ShapeMismatch

Spacing = Tuple[float, float, float]
Origin = Tuple[float, float, float]


def _frozen_array(value, dtype=None) -> np.ndarray:
    array = np.array(value, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


class GridModel(BaseModel):
    """Common geometry of every 3D grid: a 3D array plus spacing and origin in mm."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    data: np.ndarray
    spacing: Spacing = (1.0, 1.0, 1.0)
    origin: Origin = (0.0, 0.0, 0.0)

    @field_validator("spacing")
    @classmethod
    def _positive_spacing(cls, value: Spacing) -> Spacing:
        if any(not np.isfinite(s) or s <= 0 for s in value):
            raise ValueError(f"spacing components must be > 0, got {value}")
        return tuple(float(s) for s in value)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(int(s) for s in self.data.shape)


class Volume(GridModel):
    @field_validator("data")
    @classmethod
    def _real_grid(cls, value) -> np.ndarray:
        array = np.asarray(value)
        if array.ndim != 3 or min(array.shape) < 1:
            raise ValueError(f"volume must be a non-empty 3D grid, got shape {array.shape}")
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float64)
        return _frozen_array(array)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())


def label_dtype(num_classes: int) -> np.dtype:
    """Smallest unsigned integer type able to store ``num_classes - 1``."""
    return np.min_scalar_type(max(num_classes - 1, 0))


class LabelMap(GridModel):
    num_classes: PositiveInt

    @field_validator("data")
    @classmethod
    def _integer_grid(cls, value) -> np.ndarray:
        array = np.asarray(value)
        if array.ndim != 3 or min(array.shape) < 1:
            raise ValueError(f"label map must be a non-empty 3D grid, got shape {array.shape}")
        if not np.issubdtype(array.dtype, np.integer):
            raise ValueError(f"label map needs an integer dtype, got {array.dtype}")
        if array.size and array.min() < 0:
            raise ValueError("label map contains negative class indices")
        return _frozen_array(array)

    @classmethod
    def from_array(cls, data, num_classes: int, **geometry) -> "LabelMap":
        array = np.asarray(data)
        if array.size and (array.min() < 0 or array.max() >= num_classes):
            raise InvalidLabel(f"labels outside [0, {num_classes}) in array")
        return cls(data=array.astype(label_dtype(num_classes)), num_classes=num_classes, **geometry)

    def present_classes(self) -> list[int]:
        return [int(c) for c in np.unique(self.data)]


class Sex(str, Enum):
    MALE = "male"
    FEMALE = "female"
    UNSPECIFIED = "unspecified"


class SubjectAttributes(BaseModel):
    model_config = ConfigDict(frozen=True)

    age_years: int = Field(ge=0, le=130)
    sex: Sex = Sex.UNSPECIFIED
    diagnosis: Optional[str] = None


class TensorShape3(BaseModel):
    """Named 3-component tensor shape, either (B, C, S) or (B, N, D)."""

    model_config = ConfigDict(frozen=True)

    batch: PositiveInt
    middle: PositiveInt
    last: PositiveInt

    def as_tuple(self) -> Tuple[int, int, int]:
        return (self.batch, self.middle, self.last)


def validate_pair(volume: Volume, label_map: LabelMap) -> None:
    """Check that an image and its label map describe the same grid."""
    if volume.shape != label_map.shape:
        raise ShapeMismatch(f"volume shape {volume.shape} != label shape {label_map.shape}")
    if not np.allclose(volume.spacing, label_map.spacing, rtol=0, atol=1e-9):
        raise ShapeMismatch(f"spacing {volume.spacing} != {label_map.spacing}")
    if label_map.data.size and int(label_map.data.max()) >= label_map.num_classes:
        raise InvalidLabel(
            f"label value {int(label_map.data.max())} >= num_classes {label_map.num_classes}"
        )
    if not volume.is_finite():
        raise NonFinite("volume contains NaN or Inf intensities")


def one_hot(label_map: LabelMap) -> np.ndarray:
    """(X, Y, Z) class indices -> (K, X, Y, Z) float32 indicator channels."""
    eye = np.eye(label_map.num_classes, dtype=np.float32)
    return np.moveaxis(eye[label_map.data.astype(np.int64)], -1, 0)


def decode_argmax(scores: np.ndarray, like: Optional[GridModel] = None) -> LabelMap:
    """(K, X, Y, Z) class scores -> LabelMap of the arg-max class."""
    num_classes = scores.shape[0]
    geometry = {} if like is None else {"spacing": like.spacing, "origin": like.origin}
    labels = np.argmax(scores, axis=0).astype(label_dtype(num_classes))
    return LabelMap(data=labels, num_classes=num_classes, **geometry)
