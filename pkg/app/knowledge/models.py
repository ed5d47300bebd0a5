from typing import Protocol, runtime_checkable

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, field_validator

from app.core.models import SubjectAttributes

DEFAULT_TEMPLATE = (
    "This is a brain magnetic resonance image acquired from a {sex} "
    "with {diagnosis} at {age_decade} years old"
)
HIDDEN_DIM = 768


class KnowledgeConfig(BaseModel):
    template: str = DEFAULT_TEMPLATE
    healthy_phrase: str = "no reported condition"
    unspecified_sex_phrase: str = "person"
    fixed_n: PositiveInt = 32
    hidden_dim: PositiveInt = HIDDEN_DIM


class PromptSentence(BaseModel):
    model_config = ConfigDict(frozen=True)

    text: str = Field(min_length=1)
    source_attributes: SubjectAttributes


class KnowledgeEmbedding(BaseModel):
    """(N, D) block of token embeddings for one sentence."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    tokens: np.ndarray
    # token count before padding / truncation
    raw_tokens: int = 0

    @field_validator("tokens")
    @classmethod
    def _finite_matrix(cls, value) -> np.ndarray:
        array = np.array(value, dtype=np.float32, copy=True)
        if array.ndim != 2:
            raise ValueError(f"knowledge embedding must be (N, D), got {array.shape}")
        if not np.isfinite(array).all():
            raise ValueError("knowledge embedding contains NaN or Inf")
        array.setflags(write=False)
        return array

    @property
    def N(self) -> int:
        return int(self.tokens.shape[0])

    @property
    def D(self) -> int:
        return int(self.tokens.shape[1])


@runtime_checkable
class TextEncoder(Protocol):
    name: str
    max_tokens: int
    hidden_dim: int

    def encode(self, sentence: str) -> np.ndarray:
        """Return the raw (n_tokens, hidden_dim) float32 token embeddings."""
        ...
