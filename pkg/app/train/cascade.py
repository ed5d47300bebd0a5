import numpy as np
import torch

from app.core.errors import ShapeMismatch
from app.core.models import LabelMap, Volume, label_dtype

from .loops import predicted_tissue_input
from .models import Checkpoint


def _as_label_map(labels: torch.Tensor, num_classes: int, like: Volume) -> LabelMap:
    return LabelMap(
        data=labels.numpy().astype(label_dtype(num_classes)),
        num_classes=num_classes,
        spacing=like.spacing,
        origin=like.origin,
    )


def structure_with_image(structure_ckpt: Checkpoint, num_tissue_classes: int) -> bool:
    """The checkpoint's own with-image flag, checked against the structure model's input channels."""
    with_image = bool(structure_ckpt.info.get("with_image", False))
    expected = num_tissue_classes + int(with_image)
    in_channels = structure_ckpt.model.config.in_channels
    if in_channels != expected:
        raise ShapeMismatch(f"structure model takes {in_channels} channels, tissue model yields {expected}")
    return with_image


def cascade_predict(tissue_ckpt: Checkpoint, structure_ckpt: Checkpoint, volume: Volume) -> dict[str, LabelMap]:
    """Tissue model on the image; its one-hot arg-max map (plus the image, if trained so) feeds the structure model."""
    tissue_model, structure_model = tissue_ckpt.model, structure_ckpt.model
    num_tissue = tissue_model.config.num_classes
    with_image = structure_with_image(structure_ckpt, num_tissue)
    image = torch.from_numpy(np.array(volume.data, dtype=np.float32))[None, None]
    tissue, structure_input = predicted_tissue_input(tissue_model, image, with_image)
    structure_model.eval()
    with torch.no_grad():
        structure = structure_model(structure_input).argmax(dim=1)
    return {
        "tissue": _as_label_map(tissue[0], num_tissue, volume),
        "structure": _as_label_map(structure[0], structure_model.config.num_classes, volume),
    }
