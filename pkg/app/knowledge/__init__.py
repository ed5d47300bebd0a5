from fastapi import APIRouter

from .cache import EmbeddingStore, cache_embedding, embedding_key, load_embedding  # noqa: F401
from .encoders import (  # noqa: F401
    StubTextEncoder,
    build_encoder,
    encode_knowledge,
    group_mean_embedding,
    stub_encoder,
)
from .models import (  # noqa: F401
    DEFAULT_TEMPLATE,
    KnowledgeConfig,
    KnowledgeEmbedding,
    PromptSentence,
    TextEncoder,
)
from .routers import encoder_routes
from .sentences import AgeBucket, bucket_age, render_sentence  # noqa: F401

knowledge_router = APIRouter()
knowledge_router.include_router(encoder_routes)
