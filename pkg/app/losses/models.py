from enum import Enum

from pydantic import BaseModel, NonNegativeFloat


class LossName(str, Enum):
    DICE = "dice"
    DICE_FOCAL = "dice_focal"


class LossConfig(BaseModel):
    alpha: NonNegativeFloat = 100.0
    gamma: NonNegativeFloat = 0.2
    smooth: NonNegativeFloat = 1e-5
    include_background: bool = True
    # lower bound applied to p_t before the log
    clamp_min: float = 1e-7
