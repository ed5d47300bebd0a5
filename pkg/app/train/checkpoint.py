"""
Checkpoint directories.

``manifest.json`` holds the backbone and prompt configs, stage, mode, epoch,
config hash, metric history and run info; model weights live in one tensor
container per partition (``encoder.kgt``, ``decoder.kgt``, ``prompt.kgt``);
optimizer state, when kept, in ``optimizer.pt``.
"""

import json
import logging
from pathlib import Path
from typing import Union

import numpy as np
import torch
from pydantic import ValidationError

from app.core.errors import IOFailure
from app.utils.tensor_store import read_tensors, write_tensors
from backbones import BackboneConfig, build, partition_of
from prompt import PromptConfig

from .models import Checkpoint, Stage, TrainMode

log = logging.getLogger("kgpl")

MANIFEST = "manifest.json"
OPTIMIZER = "optimizer.pt"


def save_checkpoint(ckpt: Checkpoint, directory: Union[str, Path]) -> Path:
    directory = Path(directory)
    groups: dict[str, dict[str, np.ndarray]] = {}
    for name, tensor in ckpt.model.state_dict().items():
        groups.setdefault(partition_of(name), {})[name] = tensor.detach().cpu().numpy()

    manifest = {
        "backbone": ckpt.backbone.model_dump(mode="json"),
        "prompt": ckpt.prompt_config.model_dump(mode="json") if ckpt.prompt_config else None,
        "stage": ckpt.stage.value,
        "mode": ckpt.mode.value,
        "epoch": ckpt.epoch,
        "config_hash": ckpt.config_hash,
        "history": ckpt.history,
        "info": ckpt.info,
        "partitions": sorted(groups),
    }
    try:
        directory.mkdir(parents=True, exist_ok=True)
        for partition, tensors in groups.items():
            write_tensors(directory / f"{partition}.kgt", tensors, meta={"partition": partition})
        if ckpt.optimizer_state is not None:
            torch.save(ckpt.optimizer_state, directory / OPTIMIZER)
        (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    except OSError as e:
        raise IOFailure(f"could not write checkpoint {directory}: {e}") from e
    log.info("checkpoint: saved %s %s epoch %d to %s", ckpt.stage.value, ckpt.mode.value, ckpt.epoch, directory)
    return directory


def load_checkpoint(directory: Union[str, Path], with_optimizer: bool = False) -> Checkpoint:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / MANIFEST).read_text())
    except OSError as e:
        raise IOFailure(f"no checkpoint at {directory}: {e}") from e
    except json.JSONDecodeError as e:
        raise IOFailure(f"corrupt checkpoint manifest in {directory}") from e

    try:
        backbone = BackboneConfig.model_validate(manifest["backbone"])
        prompt = PromptConfig.model_validate(manifest["prompt"]) if manifest.get("prompt") else None
    except (KeyError, ValidationError) as e:
        raise IOFailure(f"checkpoint {directory} has an invalid config: {e}") from e

    model = build(backbone)
    if prompt is not None:
        model.attach_prompts(prompt)
    state = {}
    for partition in manifest.get("partitions", []):
        tensors, _ = read_tensors(directory / f"{partition}.kgt")
        state.update({name: torch.from_numpy(array) for name, array in tensors.items()})
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as e:
        raise IOFailure(f"checkpoint {directory} does not match its backbone: {e}") from e

    optimizer_state = None
    if with_optimizer and (directory / OPTIMIZER).exists():
        optimizer_state = torch.load(directory / OPTIMIZER, weights_only=True)
    return Checkpoint(
        model=model,
        stage=Stage(manifest["stage"]),
        mode=TrainMode(manifest["mode"]),
        epoch=manifest["epoch"],
        config_hash=manifest["config_hash"],
        history=manifest["history"],
        prompt_config=prompt,
        optimizer_state=optimizer_state,
        info=manifest.get("info", {}),
    )
