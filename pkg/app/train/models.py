from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional, Tuple

from pydantic import BaseModel, Field, NonNegativeFloat, NonNegativeInt, PositiveFloat, PositiveInt
from torch.utils.data import Dataset

from app.core.errors import BadConfig
from backbones import BackboneConfig, SegmentationModel
from prompt import PromptConfig


class TrainMode(str, Enum):
    PRETRAIN_FULL = "pretrain_full"
    FINETUNE_KGPL = "finetune_kgpl"
    FINETUNE_FULL = "finetune_full"
    FINETUNE_RANDOM_PROMPTS = "finetune_random_prompts"


class Stage(str, Enum):
    TISSUE = "tissue"
    STRUCTURE = "structure"


class TrainConfig(BaseModel):
    lr: PositiveFloat = 1e-4
    weight_decay: NonNegativeFloat = 1e-5
    max_epochs: PositiveInt = 50
    early_stop_patience: PositiveInt = 10
    warmup_epochs: NonNegativeInt = 2
    seed: int = 0
    batch_size: PositiveInt = 2
    mode: TrainMode = TrainMode.PRETRAIN_FULL
    grad_clip: Optional[PositiveFloat] = 1.0
    # fraction of boundary voxels relabelled in pretraining targets
    label_noise: float = Field(0.05, ge=0.0, le=1.0)
    augment: bool = True
    crop: Optional[Tuple[PositiveInt, PositiveInt, PositiveInt]] = None
    # structure model also sees the image next to the one-hot tissue map
    structure_with_image: bool = False
    # stop after this many optimizer steps (None: run every epoch)
    max_steps: Optional[PositiveInt] = None


@dataclass
class StageData:
    """
    Train/validation datasets for one cascade stage. Structure stages read
    the arg-max prediction of ``tissue_model``, never the tissue ground truth.
    """

    stage: Stage
    train: Dataset
    val: Optional[Dataset] = None
    num_tissue_classes: int = 0
    with_image: bool = False
    tissue_model: Optional[SegmentationModel] = None

    def __post_init__(self):
        self.stage = Stage(self.stage)
        if self.tissue_model is None:
            return
        if self.stage != Stage.STRUCTURE:
            raise BadConfig("only structure stages take a tissue model")
        num_tissue = self.tissue_model.config.num_classes
        if self.num_tissue_classes == 0:
            self.num_tissue_classes = num_tissue
        elif self.num_tissue_classes != num_tissue:
            raise BadConfig(f"tissue model predicts {num_tissue} classes, data expects {self.num_tissue_classes}")


@dataclass
class Checkpoint:
    model: SegmentationModel
    stage: Stage
    mode: TrainMode
    epoch: int = 0
    config_hash: str = ""
    history: list = field(default_factory=list)
    prompt_config: Optional[PromptConfig] = None
    optimizer_state: Optional[dict] = None
    # run metadata: loss name, trainable parameter count, frozen flags
    info: dict[str, Any] = field(default_factory=dict)

    @property
    def backbone(self) -> BackboneConfig:
        return self.model.config
