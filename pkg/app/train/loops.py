import copy
import dataclasses
import logging
import math
from pathlib import Path
from typing import Callable, Optional, Tuple

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F
from torch.utils.data import DataLoader, Dataset

from app.core.errors import BadConfig, Divergence
from app.core.models import LabelMap
from app.utils.logs import EpochLog
from backbones import BackboneConfig, SegmentationModel, count_parameters, set_trainable, trainable_partitions
from data import collate_samples
from losses import LossConfig, loss_for_stage, loss_name
from metrics import aggregate_reports, dsc, report

from .checkpoint import save_checkpoint
from .models import Checkpoint, Stage, StageData, TrainConfig, TrainMode
from .schedule import build_optimizer, build_scheduler

log = logging.getLogger("kgpl")

BatchHook = Callable[[dict], None]


def seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)
    torch.use_deterministic_algorithms(True, warn_only=True)


def stage_backbone(config: BackboneConfig, stage: Stage, num_tissue_classes: int, num_classes: int, with_image: bool = False) -> BackboneConfig:
    """Channel counts for one cascade stage: tissue models read the image, structure models the one-hot tissue map."""
    if Stage(stage) == Stage.TISSUE:
        return config.model_copy(update={"in_channels": 1, "num_classes": num_classes})
    return config.model_copy(
        update={"in_channels": num_tissue_classes + int(with_image), "num_classes": num_classes}
    )


def tissue_as_input(tissue: torch.Tensor, num_tissue_classes: int, image: Optional[torch.Tensor] = None) -> torch.Tensor:
    """(B, X, Y, Z) tissue labels -> (B, K_t[+1], X, Y, Z) structure-model input."""
    channels = torch.movedim(F.one_hot(tissue.long(), num_tissue_classes), -1, 1).float()
    return channels if image is None else torch.cat([channels, image], dim=1)


def predicted_tissue_input(
    tissue_model: SegmentationModel, image: torch.Tensor, with_image: bool = False
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Arg-max tissue labels of ``tissue_model`` on ``image`` and the structure-model input built from them."""
    was_training = tissue_model.training
    tissue_model.eval()
    with torch.no_grad():
        tissue = tissue_model(image).argmax(dim=1)
    tissue_model.train(was_training)
    num_tissue = tissue_model.config.num_classes
    return tissue, tissue_as_input(tissue, num_tissue, image if with_image else None)


def stage_inputs(batch: dict, data: StageData):
    if data.stage == Stage.TISSUE:
        return batch["image"], batch["tissue"]
    if data.tissue_model is None:
        raise BadConfig("structure stage needs a tissue model to predict its input")
    _, x = predicted_tissue_input(data.tissue_model, batch["image"], data.with_image)
    return x, batch["structure"]


def _loader(dataset: Dataset, cfg: TrainConfig, shuffle: bool, epoch: int = 0) -> DataLoader:
    generator = torch.Generator().manual_seed(cfg.seed + epoch)
    return DataLoader(
        dataset,
        batch_size=cfg.batch_size,
        shuffle=shuffle,
        generator=generator,
        num_workers=0,
        collate_fn=collate_samples,
    )


def predict_labels(model: SegmentationModel, x: torch.Tensor) -> torch.Tensor:
    with torch.no_grad():
        return model(x).argmax(dim=1)


def evaluate_model(model: SegmentationModel, dataset: Dataset, data: StageData, cfg: TrainConfig) -> float:
    """Mean foreground DSC over the dataset (per-subject mean over foreground classes present)."""
    was_training = model.training
    model.eval()
    scores = []
    for batch in _loader(dataset, cfg, shuffle=False):
        x, target = stage_inputs(batch, data)
        pred = predict_labels(model, x)
        k = model.config.num_classes
        for p, g in zip(pred.numpy(), target.numpy()):
            pred_map = LabelMap.from_array(p, k)
            gt_map = LabelMap.from_array(g, k)
            classes = [c for c in gt_map.present_classes() if c != 0]
            if classes:
                scores.append(float(np.mean([dsc(pred_map, gt_map, c) for c in classes])))
    model.train(was_training)
    return float(np.mean(scores)) if scores else 0.0


def evaluate_reports(
    model: SegmentationModel, dataset: Dataset, data: StageData, cfg: TrainConfig, class_names=None
) -> pd.DataFrame:
    """Per-class DSC/ASD averaged over subjects."""
    was_training = model.training
    model.eval()
    tables = []
    for batch in _loader(dataset, cfg, shuffle=False):
        x, target = stage_inputs(batch, data)
        pred = predict_labels(model, x)
        k = model.config.num_classes
        for p, g in zip(pred.numpy(), target.numpy()):
            tables.append(report(LabelMap.from_array(p, k), LabelMap.from_array(g, k), class_names))
    model.train(was_training)
    return aggregate_reports(tables)


def fit(
    model: SegmentationModel,
    data: StageData,
    cfg: TrainConfig,
    loss_cfg: LossConfig = LossConfig(),
    out_dir: Optional[Path] = None,
    config_hash: str = "",
    on_batch: Optional[BatchHook] = None,
    info: Optional[dict] = None,
    prompt_config=None,
) -> Checkpoint:
    """
    Train the trainable partitions of ``model`` on ``data`` and return the
    best-validation checkpoint (the last epoch when there is no validation set).
    """
    if len(data.train) == 0:
        raise BadConfig("training set is empty")
    if data.stage == Stage.STRUCTURE and data.tissue_model is None:
        raise BadConfig("structure stage needs a tissue model to predict its input")
    seed_everything(cfg.seed)
    criterion = loss_for_stage(data.stage.value, loss_cfg)
    optimizer = build_optimizer(model.parameters(), cfg)
    steps_per_epoch = math.ceil(len(data.train) / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.max_epochs
    if cfg.max_steps:
        total_steps = min(total_steps, cfg.max_steps)
    scheduler = build_scheduler(optimizer, total_steps, cfg)
    trainable = [p for p in model.parameters() if p.requires_grad]

    info = dict(info or {})
    info.update(
        {
            "loss": loss_name(data.stage.value).value,
            "trainable_parameters": count_parameters(model, trainable_only=True),
            "total_parameters": count_parameters(model),
            "trainable_partitions": trainable_partitions(model),
            "with_image": data.with_image,
        }
    )
    log.info(
        "train: stage=%s mode=%s loss=%s trainable_parameters=%d encoder_frozen=%s trainable_partitions=%s",
        data.stage.value,
        cfg.mode.value,
        info["loss"],
        info["trainable_parameters"],
        str(not info["trainable_partitions"]["encoder"]).lower(),
        ",".join(name for name, on in info["trainable_partitions"].items() if on),
    )

    epoch_log = EpochLog(Path(out_dir) / "train_log.jsonl" if out_dir else None)
    best_score, best_state, best_epoch = -math.inf, None, 0
    stale, step = 0, 0
    for epoch in range(1, cfg.max_epochs + 1):
        model.train()
        if hasattr(data.train, "set_epoch"):
            data.train.set_epoch(epoch)
        losses = []
        for batch in _loader(data.train, cfg, shuffle=True, epoch=epoch):
            if on_batch is not None:
                on_batch(batch)
            x, target = stage_inputs(batch, data)
            probs = torch.softmax(model(x), dim=1)
            loss = criterion(probs, target)
            if not torch.isfinite(loss):
                raise Divergence(f"loss became {loss.item()} at epoch {epoch}, step {step}")
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            if cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(trainable, cfg.grad_clip)
            optimizer.step()
            scheduler.step()
            losses.append(loss.item())
            step += 1
            if step >= total_steps:
                break

        val_dsc = evaluate_model(model, data.val, data, cfg) if data.val is not None and len(data.val) else float("nan")
        lr = optimizer.param_groups[0]["lr"]
        epoch_log.write(epoch, float(np.mean(losses)), val_dsc, lr)
        log.info("epoch %d: train_loss=%.6f val_dsc=%.4f lr=%.3g", epoch, np.mean(losses), val_dsc, lr)

        score = val_dsc if not math.isnan(val_dsc) else -epoch_log.records[-1]["train_loss"]
        if score > best_score:
            best_score, best_epoch, stale = score, epoch, 0
            best_state = copy.deepcopy(model.state_dict())
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                log.info("early stop at epoch %d (best %d)", epoch, best_epoch)
                break
        if step >= total_steps:
            break

    model.load_state_dict(best_state)
    model.eval()
    ckpt = Checkpoint(
        model=model,
        stage=data.stage,
        mode=cfg.mode,
        epoch=best_epoch,
        config_hash=config_hash,
        history=epoch_log.records,
        prompt_config=prompt_config,
        optimizer_state=optimizer.state_dict(),
        info=info,
    )
    if out_dir:
        save_checkpoint(ckpt, out_dir)
    return ckpt


def pretrain(
    model: SegmentationModel,
    data: StageData,
    cfg: TrainConfig,
    loss_cfg: LossConfig = LossConfig(),
    out_dir: Optional[Path] = None,
    config_hash: str = "",
    tissue_ckpt: Optional[Checkpoint] = None,
) -> Checkpoint:
    """
    Stage-1 training with every partition trainable. Structure stages need
    ``tissue_ckpt`` (or a tissue model already on ``data``) to predict their input.
    """
    if cfg.mode != TrainMode.PRETRAIN_FULL:
        raise BadConfig(f"pretrain needs mode pretrain_full, got {cfg.mode.value}")
    if tissue_ckpt is not None:
        if tissue_ckpt.stage != Stage.TISSUE:
            raise BadConfig(f"expected a tissue checkpoint, got {tissue_ckpt.stage.value}")
        data = dataclasses.replace(data, tissue_model=tissue_ckpt.model)
    set_trainable(model, ("encoder", "decoder", "prompt"))
    return fit(model, data, cfg, loss_cfg, out_dir, config_hash, info={"encoder_frozen": False})
