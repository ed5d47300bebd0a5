from .injection import (  # noqa: F401
    EncoderLayer,
    apply_layer,
    discard,
    init_prompts,
    inject,
    preinitialize,
    propagate,
    randomize_prompts,
)
from .models import (  # noqa: F401
    ImageTokenBlock,
    InjectionRecord,
    ProjectionPath,
    PromptConfig,
    PromptState,
)
from .projection import AAPProjection, TransposeProjection, project_aap, project_transpose  # noqa: F401
