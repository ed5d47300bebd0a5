"""
Volume and label-map files.

``.nii`` / ``.nii.gz`` are NIfTI-1 (nibabel); ``.kgt`` is the internal tensor
container. NIfTI stores the affine in float32, so spacing and origin round
trip exactly only when they are float32-representable; ``.kgt`` keeps them
exactly.
"""

import logging
import re
import zlib
from pathlib import Path
from typing import Union

import nibabel as nib
import numpy as np
from nibabel.filebasedimages import ImageFileError

from app.core.errors import IOFailure, UnsupportedFormat
from app.core.models import GridModel, LabelMap, Volume
from app.utils.tensor_store import read_tensors, write_tensors

log = logging.getLogger("kgpl")

NIFTI_SUFFIXES = (".nii", ".nii.gz")
CONTAINER_SUFFIX = ".kgt"
_CLASSES = re.compile(r"kgpl num_classes=(\d+)")


def file_format(path: Path) -> str:
    name = Path(path).name
    if name.endswith(".nii.gz") or name.endswith(".nii"):
        return "nifti"
    if name.endswith(CONTAINER_SUFFIX):
        return "container"
    raise UnsupportedFormat(f"unsupported file type {name!r}; use .nii, .nii.gz or {CONTAINER_SUFFIX}")


def _affine(grid: GridModel) -> np.ndarray:
    affine = np.diag([*grid.spacing, 1.0])
    affine[:3, 3] = grid.origin
    return affine


def _save_nifti(path: Path, grid: GridModel, num_classes: int = 0) -> None:
    image = nib.Nifti1Image(np.asarray(grid.data), _affine(grid))
    image.header.set_data_dtype(grid.data.dtype)
    image.header.set_xyzt_units("mm")
    if num_classes:
        image.header["descrip"] = f"kgpl num_classes={num_classes}".encode("ascii")
    nib.save(image, str(path))


def _load_nifti(path: Path):
    image = nib.load(str(path))
    data = np.asanyarray(image.dataobj)
    affine = image.affine
    spacing = tuple(float(s) for s in np.abs(np.diag(affine)[:3]))
    origin = tuple(float(o) for o in affine[:3, 3])
    descrip = image.header["descrip"].tobytes().decode("ascii", errors="ignore")
    match = _CLASSES.search(descrip)
    return data, {"spacing": spacing, "origin": origin, "num_classes": int(match.group(1)) if match else 0}


def _save(path: Union[str, Path], grid: GridModel, kind: str, num_classes: int = 0) -> Path:
    path = Path(path)
    fmt = file_format(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == "nifti":
            _save_nifti(path, grid, num_classes)
        else:
            meta = {"kind": kind, "spacing": list(grid.spacing), "origin": list(grid.origin)}
            if num_classes:
                meta["num_classes"] = num_classes
            write_tensors(path, {"data": grid.data}, meta=meta)
    except (OSError, ValueError) as e:
        raise IOFailure(f"could not write {path}: {e}") from e
    return path


def _load(path: Union[str, Path], kind: str):
    path = Path(path)
    fmt = file_format(path)
    if fmt == "container":
        tensors, meta = read_tensors(path)
        if meta.get("kind") != kind or "data" not in tensors:
            raise IOFailure(f"{path} does not hold a {kind}")
        return tensors["data"], {
            "spacing": tuple(meta["spacing"]),
            "origin": tuple(meta["origin"]),
            "num_classes": meta.get("num_classes", 0),
        }
    try:
        return _load_nifti(path)
    except (OSError, EOFError, ValueError, zlib.error, ImageFileError) as e:
        raise IOFailure(f"could not read {path}: {e}") from e


def save_volume(path: Union[str, Path], volume: Volume) -> Path:
    return _save(path, volume, "volume")


def load_volume(path: Union[str, Path]) -> Volume:
    data, meta = _load(path, "volume")
    return Volume(data=data, spacing=meta["spacing"], origin=meta["origin"])


def save_label_map(path: Union[str, Path], label_map: LabelMap) -> Path:
    return _save(path, label_map, "label_map", num_classes=label_map.num_classes)


def load_label_map(path: Union[str, Path]) -> LabelMap:
    data, meta = _load(path, "label_map")
    num_classes = meta["num_classes"] or int(np.max(data)) + 1
    return LabelMap.from_array(data, num_classes, spacing=meta["spacing"], origin=meta["origin"])
