import hashlib
import logging
from typing import Iterable

import numpy as np

from app.core.config import Settings, settings
from app.core.errors import BadConfig, EncoderFailure

from .models import HIDDEN_DIM, KnowledgeEmbedding, PromptSentence, TextEncoder

log = logging.getLogger("kgpl")


class StubTextEncoder:
    """
    Deterministic stand-in for a pretrained text encoder.

    Sentences are split on whitespace. Token ``t`` at position ``i`` maps to
    the vector obtained from ``SHAKE-256(f"{seed}|{i}|{t}")``: the first
    ``4 * hidden_dim`` digest bytes are read as little-endian uint32 values,
    mapped to ``u / 2**31 - 1`` in [-1, 1) and scaled to unit L2 norm. Only
    hashlib and integer arithmetic are involved, so vectors are identical on
    every platform.
    """

    def __init__(self, seed: int = 0, hidden_dim: int = HIDDEN_DIM, max_tokens: int = 77):
        self.seed = int(seed)
        self.hidden_dim = int(hidden_dim)
        self.max_tokens = int(max_tokens)
        self.name = f"stub-shake256-seed{self.seed}-d{self.hidden_dim}"

    def token_vector(self, token: str, position: int) -> np.ndarray:
        digest = hashlib.shake_256(f"{self.seed}|{position}|{token}".encode("utf-8"))
        words = np.frombuffer(digest.digest(4 * self.hidden_dim), dtype="<u4").astype(np.float64)
        vector = words / 2.0**31 - 1.0
        return (vector / np.linalg.norm(vector)).astype(np.float32)

    def encode(self, sentence: str) -> np.ndarray:
        tokens = sentence.split()[: self.max_tokens]
        if not tokens:
            return np.zeros((0, self.hidden_dim), dtype=np.float32)
        return np.stack([self.token_vector(t, i) for i, t in enumerate(tokens)])


def stub_encoder(seed: int = 0, hidden_dim: int = HIDDEN_DIM) -> StubTextEncoder:
    return StubTextEncoder(seed=seed, hidden_dim=hidden_dim)


def pad_tokens(raw: np.ndarray, fixed_n: int) -> np.ndarray:
    """Truncate or zero-pad the token axis to exactly ``fixed_n`` rows."""
    out = np.zeros((fixed_n, raw.shape[1]), dtype=np.float32)
    keep = min(fixed_n, raw.shape[0])
    out[:keep] = raw[:keep]
    return out


def encode_knowledge(encoder: TextEncoder, sentence: PromptSentence, fixed_n: int = 32) -> KnowledgeEmbedding:
    if fixed_n < 1:
        raise BadConfig(f"fixed_N must be >= 1, got {fixed_n}")
    try:
        raw = np.asarray(encoder.encode(sentence.text), dtype=np.float32)
    except EncoderFailure:
        raise
    except Exception as e:
        raise EncoderFailure(f"{encoder.name} failed on {sentence.text!r}: {e}") from e

    if raw.ndim != 2 or raw.shape[1] != encoder.hidden_dim:
        raise EncoderFailure(
            f"{encoder.name} returned shape {raw.shape}, expected (n, {encoder.hidden_dim})"
        )
    if not np.isfinite(raw).all():
        raise EncoderFailure(f"{encoder.name} returned non-finite embeddings")
    if raw.shape[0] > fixed_n:
        log.debug("knowledge: truncating %d tokens to %d", raw.shape[0], fixed_n)
    return KnowledgeEmbedding(tokens=pad_tokens(raw, fixed_n), raw_tokens=raw.shape[0])


def group_mean_embedding(embeddings: Iterable[KnowledgeEmbedding], groups: Iterable[str]) -> np.ndarray:
    """
    Mean over attribute groups of each group's mean embedding, so every
    distinct sentence weighs the same regardless of how many subjects share it.
    """
    by_group: dict[str, list[np.ndarray]] = {}
    for emb, group in zip(embeddings, groups):
        by_group.setdefault(group, []).append(emb.tokens.astype(np.float64))
    if not by_group:
        raise BadConfig("no embeddings to average")
    means = [np.mean(np.stack(items), axis=0) for _, items in sorted(by_group.items())]
    return np.mean(np.stack(means), axis=0).astype(np.float32)


def build_encoder(config: Settings = settings, hidden_dim: int = HIDDEN_DIM) -> TextEncoder:
    """Pick the encoder backend named in the settings."""
    if config.ENCODER_BACKEND == "stub":
        return stub_encoder(config.ENCODER_SEED, hidden_dim)

    from .services.external_encoder import HTTPTextEncoder, SubprocessTextEncoder

    if config.ENCODER_BACKEND == "http":
        return HTTPTextEncoder(config.ENCODER_URL, hidden_dim=hidden_dim, timeout=config.ENCODER_TIMEOUT)
    if not config.ENCODER_COMMAND:
        raise BadConfig("ENCODER_COMMAND must be set for the subprocess encoder")
    return SubprocessTextEncoder(config.ENCODER_COMMAND, hidden_dim=hidden_dim, timeout=config.ENCODER_TIMEOUT)
