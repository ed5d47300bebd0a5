from enum import Enum
from typing import Literal, Optional, Tuple

from pydantic import BaseModel, PositiveInt


class BackboneKind(str, Enum):
    CONV_UNET = "conv_unet"
    PATCH_ATTENTION = "patch_attention"
    WINDOWED_ATTENTION = "windowed_attention"


# CLI names -> kinds
BACKBONE_ALIASES = {
    "unet": BackboneKind.CONV_UNET,
    "unetr": BackboneKind.PATCH_ATTENTION,
    "swin": BackboneKind.WINDOWED_ATTENTION,
}

_DEFAULT_PATCH = {
    BackboneKind.CONV_UNET: 1,
    BackboneKind.PATCH_ATTENTION: 4,
    BackboneKind.WINDOWED_ATTENTION: 2,
}


class BackboneConfig(BaseModel):
    kind: BackboneKind = BackboneKind.CONV_UNET
    in_channels: PositiveInt = 1
    num_classes: PositiveInt = 4
    stage_channels: list[PositiveInt] = [8, 16, 32]
    input_size: Tuple[PositiveInt, PositiveInt, PositiveInt] = (16, 16, 16)
    patch_size: Optional[PositiveInt] = None
    window_size: PositiveInt = 4
    num_heads: PositiveInt = 2
    # patch_attention only
    hidden_size: PositiveInt = 32
    num_blocks: PositiveInt = 4
    mlp_ratio: float = 2.0
    padding_mode: Literal["zeros", "circular"] = "zeros"
    seed: int = 0

    def resolved_patch_size(self) -> int:
        return self.patch_size or _DEFAULT_PATCH[self.kind]
