from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import binary_erosion, distance_transform_edt, generate_binary_structure

from app.core.errors import EmptyMask, ShapeMismatch
from app.core.models import LabelMap

# face neighbours only
SIX_CONNECTED = generate_binary_structure(3, 1)


def _masks(pred: LabelMap, gt: LabelMap, class_id: int):
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"prediction shape {pred.shape} != reference shape {gt.shape}")
    return pred.data == class_id, gt.data == class_id


def dsc(pred: LabelMap, gt: LabelMap, class_id: int) -> float:
    """2|P & G| / (|P| + |G|); 1 when the class is absent from both."""
    p, g = _masks(pred, gt, class_id)
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, g).sum()) / total


def boundary(mask: np.ndarray) -> np.ndarray:
    """Mask voxels with at least one 6-neighbour outside the mask (the grid edge counts as outside)."""
    return mask & ~binary_erosion(mask, structure=SIX_CONNECTED, border_value=0)


def asd(
    pred: LabelMap, gt: LabelMap, class_id: int, spacing: Optional[Sequence[float]] = None
) -> float:
    """
    Average surface distance in mm: mean nearest-boundary distance from the
    predicted boundary to the reference one and back, averaged over the two
    directions.
    """
    p, g = _masks(pred, gt, class_id)
    if not p.any() or not g.any():
        side = "prediction" if not p.any() else "reference"
        raise EmptyMask(f"class {class_id} is empty in the {side}")
    sampling = tuple(float(s) for s in (spacing if spacing is not None else gt.spacing))
    p_border, g_border = boundary(p), boundary(g)
    to_gt = distance_transform_edt(~g_border, sampling=sampling)[p_border]
    to_pred = distance_transform_edt(~p_border, sampling=sampling)[g_border]
    return float((to_gt.mean() + to_pred.mean()) / 2.0)
