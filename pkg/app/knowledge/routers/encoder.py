from functools import lru_cache

from fastapi import APIRouter, Depends, HTTPException
from pydantic import BaseModel

from app.core.config import settings
from app.core.errors import EncoderFailure, KGPLError

from ..encoders import build_encoder
from ..models import TextEncoder
from ..services.external_encoder import pack_embedding

encoder_routes = APIRouter(prefix="/encoder", tags=["encoder"])


class EncodeRequest(BaseModel):
    sentence: str


class EncodedSentence(BaseModel):
    name: str
    shape: list[int]
    dtype: str
    payload: str


class EncoderInfo(BaseModel):
    name: str
    hidden_dim: int
    max_tokens: int


@lru_cache
def get_encoder() -> TextEncoder:
    return build_encoder(settings)


@encoder_routes.get("/", response_model=EncoderInfo)
def read_encoder(encoder: TextEncoder = Depends(get_encoder)):
    return EncoderInfo(name=encoder.name, hidden_dim=encoder.hidden_dim, max_tokens=encoder.max_tokens)


@encoder_routes.post("/encode", response_model=EncodedSentence)
def encode_sentence(request: EncodeRequest, encoder: TextEncoder = Depends(get_encoder)):
    """
    Encodes a sentence with the configured text encoder.

    Returns the raw (n_tokens, hidden_dim) block; padding to a fixed token
    count is left to the caller.
    """
    try:
        tokens = encoder.encode(request.sentence)
    except EncoderFailure as e:
        raise HTTPException(status_code=502, detail=e.detail)
    except KGPLError as e:
        raise HTTPException(status_code=422, detail=e.detail)
    return pack_embedding(encoder.name, tokens)

