from .encoder import encoder_routes  # noqa: F401
