import hashlib
import logging
from pathlib import Path
from typing import Optional

from app.core.config import settings
from app.core.errors import ChecksumMismatch, IOFailure, KeyNotFound
from app.utils.tensor_store import read_tensors, write_tensors

from .encoders import encode_knowledge
from .models import KnowledgeEmbedding, PromptSentence, TextEncoder

log = logging.getLogger("kgpl")

SUFFIX = ".kemb"


def embedding_key(encoder_name: str, sentence_text: str, fixed_n: int) -> str:
    """Content hash identifying one (encoder, sentence, N) embedding."""
    material = "\x1f".join([encoder_name, sentence_text, str(int(fixed_n))])
    return hashlib.sha256(material.encode("utf-8")).hexdigest()


class EmbeddingStore:
    """Directory of cached knowledge embeddings, one container file per key."""

    def __init__(self, root: Optional[Path] = None):
        self.root = Path(root) if root else Path(settings.CACHE_DIR) / "embeddings"

    def path_for(self, key: str) -> Path:
        return self.root / f"{key}{SUFFIX}"

    def create(self, key: str, emb: KnowledgeEmbedding, encoder_name: str = "") -> Path:
        meta = {
            "encoder": encoder_name,
            "shape": [emb.N, emb.D],
            "dtype": "<f4",
            "raw_tokens": emb.raw_tokens,
        }
        return write_tensors(self.path_for(key), {"tokens": emb.tokens}, meta=meta)

    def get_by_key(self, key: str) -> KnowledgeEmbedding:
        path = self.path_for(key)
        if not path.exists():
            raise KeyNotFound(f"no cached embedding for key {key}")
        tensors, meta = read_tensors(path)
        if "tokens" not in tensors:
            raise IOFailure(f"{path} holds no token block")
        tokens = tensors["tokens"]
        if list(tokens.shape) != meta.get("shape"):
            raise ChecksumMismatch(f"{path}: header shape {meta.get('shape')} != payload {tokens.shape}")
        return KnowledgeEmbedding(tokens=tokens, raw_tokens=meta.get("raw_tokens", 0))

    def exists(self, key: str) -> bool:
        return self.path_for(key).exists()

    def get_or_encode(self, encoder: TextEncoder, sentence: PromptSentence, fixed_n: int) -> KnowledgeEmbedding:
        key = embedding_key(encoder.name, sentence.text, fixed_n)
        if self.exists(key):
            return self.get_by_key(key)
        emb = encode_knowledge(encoder, sentence, fixed_n)
        self.create(key, emb, encoder_name=encoder.name)
        log.debug("knowledge: cached %s for %r", key[:12], sentence.text)
        return emb


def cache_embedding(store: Path, key: str, emb: KnowledgeEmbedding, encoder_name: str = "") -> Path:
    return EmbeddingStore(store).create(key, emb, encoder_name=encoder_name)


def load_embedding(store: Path, key: str) -> KnowledgeEmbedding:
    return EmbeddingStore(store).get_by_key(key)
