"""
Experiment configuration.

One TOML file describes a run; ``KGPL_``-prefixed environment variables
(nested with ``__``, e.g. ``KGPL_TRAIN__LR=3e-4``) override it and explicit
overrides from the command line win over both.
"""

import hashlib
import json
from pathlib import Path
from typing import Any, Mapping, Optional, Union

from pydantic import BaseModel, ValidationError
from pydantic_settings import BaseSettings, EnvSettingsSource, SettingsConfigDict, TomlConfigSettingsSource

from app.core.errors import BadConfig, IOFailure
from backbones import BackboneConfig
from data import PhantomSpec
from knowledge import KnowledgeConfig
from losses import LossConfig
from prompt import PromptConfig
from train import TrainConfig


class PathsConfig(BaseModel):
    data_dir: Path = Path("data/phantoms")
    out_dir: Path = Path("runs")
    cache_dir: Optional[Path] = None


class ExperimentConfig(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="KGPL_", env_nested_delimiter="__", extra="forbid")

    phantom: PhantomSpec = PhantomSpec()
    backbone: BackboneConfig = BackboneConfig()
    loss: LossConfig = LossConfig()
    knowledge: KnowledgeConfig = KnowledgeConfig()
    prompt: PromptConfig = PromptConfig()
    train: TrainConfig = TrainConfig()
    paths: PathsConfig = PathsConfig()

    @classmethod
    def settings_customise_sources(cls, settings_cls, init_settings, env_settings, dotenv_settings, file_secret_settings):
        # load_config layers file, environment and overrides itself
        return (init_settings,)


def deep_merge(base: Mapping[str, Any], update: Mapping[str, Any]) -> dict:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(
    path: Optional[Union[str, Path]] = None, overrides: Optional[Mapping[str, Any]] = None
) -> ExperimentConfig:
    layers = []
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise IOFailure(f"config file {path} does not exist")
        try:
            layers.append(TomlConfigSettingsSource(ExperimentConfig, toml_file=path)())
        except ValueError as e:
            raise BadConfig(f"cannot parse {path}: {e}") from e
    layers.append(EnvSettingsSource(ExperimentConfig)())
    layers.append(dict(overrides or {}))

    merged: dict = {}
    for layer in layers:
        merged = deep_merge(merged, layer)
    try:
        return ExperimentConfig(**merged)
    except ValidationError as e:
        raise BadConfig(str(e)) from e


def config_hash(config: Union[BaseModel, Mapping[str, Any]]) -> str:
    """sha256 of the canonical JSON form."""
    payload = config.model_dump(mode="json") if isinstance(config, BaseModel) else dict(config)
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode("utf-8")).hexdigest()
