from .models import (  # noqa: F401
    LabelMap,
    Sex,
    SubjectAttributes,
    TensorShape3,
    Volume,
    decode_argmax,
    label_dtype,
    one_hot,
    validate_pair,
)
