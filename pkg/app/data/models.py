from typing import Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, model_validator

from app.core.errors import BadSpec, ShapeMismatch
from app.core.models import LabelMap, SubjectAttributes, Volume


class PhantomSpec(BaseModel):
    size: int = Field(32, ge=8)
    num_tissues: int = Field(3, ge=1)
    # structures per phantom, split evenly over tissues
    num_structures: int = Field(9, ge=1)
    age_effect: float = Field(0.5, ge=0.0, le=1.0)
    noise_sigma: float = Field(0.1, ge=0.0)
    spacing: Tuple[PositiveFloat, PositiveFloat, PositiveFloat] = (1.0, 1.0, 1.0)
    seed: int = 0

    @model_validator(mode="after")
    def _structures_refine_tissues(self):
        if self.num_structures % self.num_tissues:
            raise ValueError(
                f"num_structures ({self.num_structures}) must be a multiple of num_tissues ({self.num_tissues})"
            )
        return self

    @classmethod
    def checked(cls, **fields) -> "PhantomSpec":
        """Build a spec, reporting validation problems as BadSpec."""
        try:
            return cls(**fields)
        except ValueError as e:
            raise BadSpec(str(e)) from e

    @property
    def structures_per_tissue(self) -> int:
        return self.num_structures // self.num_tissues

    @property
    def tissue_classes(self) -> int:
        return self.num_tissues + 1

    @property
    def structure_classes(self) -> int:
        return self.num_structures + 1

    def structure_to_tissue(self) -> list[int]:
        """Lookup table: structure label -> tissue label (background maps to background)."""
        per = self.structures_per_tissue
        return [0] + [1 + (s - 1) // per for s in range(1, self.num_structures + 1)]


class Sample(BaseModel):
    model_config = ConfigDict(frozen=True)

    volume: Volume
    tissue: LabelMap
    structure: LabelMap
    # None for unannotated subjects; knowledge fine-tuning rejects those
    attrs: Optional[SubjectAttributes] = None
    subject_id: str = ""

    @model_validator(mode="after")
    def _shared_geometry(self):
        for name, grid in (("tissue", self.tissue), ("structure", self.structure)):
            if grid.shape != self.volume.shape or grid.spacing != self.volume.spacing:
                raise ShapeMismatch(f"{name} map geometry differs from the volume")
        return self
