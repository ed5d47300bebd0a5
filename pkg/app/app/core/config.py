from pathlib import Path
from typing import Literal, Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="KGPL_",
        env_file=(".env", "secret.env"),
        env_ignore_empty=True,
        extra="ignore",
    )

    PROJECT_NAME: str = "kgpl"
    PROJECT_VERSION: str = "0.1"

    CACHE_DIR: Path = Path.home() / ".cache" / "kgpl"
    LOG_FILE: Optional[Path] = None
    LOG_LEVEL: str = "INFO"

    # text encoder used for knowledge prompts
    ENCODER_BACKEND: Literal["stub", "http", "subprocess"] = "stub"
    ENCODER_SEED: int = 0
    ENCODER_URL: str = "http://127.0.0.1:8000/encoder/encode"
    ENCODER_COMMAND: Optional[str] = None
    ENCODER_TIMEOUT: float = 30.0

    DEVICE: str = "cpu"


settings = Settings()
