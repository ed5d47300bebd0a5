from .base import SegmentationModel  # noqa: F401
from .builder import (  # noqa: F401
    PARTITIONS,
    build,
    count_parameters,
    partition_of,
    partition_parameters,
    set_trainable,
    trainable_partitions,
    validate_config,
)
from .models import BACKBONE_ALIASES, BackboneConfig, BackboneKind  # noqa: F401
