import logging
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel
from torch.utils.data import Dataset

from backbones import BackboneConfig, build, count_parameters
from data import PhantomDataset, PhantomSpec, generate_phantom, random_attributes, split
from knowledge import EmbeddingStore, KnowledgeConfig, TextEncoder, stub_encoder
from losses import LossConfig
from metrics import Comparison, compare_reports, refinement_agreement, write_report
from prompt import PromptConfig

from .cascade import cascade_predict
from .finetune import finetune_full, finetune_kgpl, finetune_random_prompts
from .loops import evaluate_model, evaluate_reports, pretrain, stage_backbone
from .models import Checkpoint, Stage, StageData, TrainConfig, TrainMode

log = logging.getLogger("kgpl")


class ComparisonResult(BaseModel):
    reports: Dict[str, list]
    comparison: Comparison
    trainable_parameters: Dict[str, int]


def run_comparison(
    checkpoint: Checkpoint,
    data: StageData,
    test: Dataset,
    encoder: TextEncoder,
    cfg: TrainConfig,
    prompt_config: Optional[PromptConfig] = None,
    knowledge_config: KnowledgeConfig = KnowledgeConfig(),
    loss_cfg: LossConfig = LossConfig(),
    store: Optional[EmbeddingStore] = None,
    include_full: bool = False,
    out_dir: Optional[Path] = None,
) -> ComparisonResult:
    """Knowledge vs random prompts (optionally full fine-tuning) from one checkpoint, scored on ``test``."""
    runs = {
        "knowledge": finetune_kgpl(
            checkpoint, data, encoder, cfg.model_copy(update={"mode": TrainMode.FINETUNE_KGPL}),
            prompt_config, knowledge_config, loss_cfg, store,
        ),
        "random": finetune_random_prompts(
            checkpoint, data, cfg.model_copy(update={"mode": TrainMode.FINETUNE_RANDOM_PROMPTS}),
            prompt_config.model_copy(update={"seed": cfg.seed}) if prompt_config else None, loss_cfg,
        ),
    }
    if include_full:
        runs["full"] = finetune_full(checkpoint, data, cfg.model_copy(update={"mode": TrainMode.FINETUNE_FULL}), loss_cfg)

    tables: Dict[str, pd.DataFrame] = {
        name: evaluate_reports(ckpt.model, test, data, cfg) for name, ckpt in runs.items()
    }
    comparison = compare_reports(tables["random"], tables["knowledge"])
    if out_dir:
        out_dir = Path(out_dir)
        for name, table in tables.items():
            write_report(table, out_dir / f"{name}.json")
            write_report(table, out_dir / f"{name}.csv")
        (out_dir / "compare.json").write_text(comparison.model_dump_json(indent=2))
    log.info(
        "compare: knowledge-random mean delta %.4f, p=%.3g",
        comparison.test.mean_delta,
        comparison.test.p_value,
    )
    return ComparisonResult(
        reports={name: table.to_dict(orient="records") for name, table in tables.items()},
        comparison=comparison,
        trainable_parameters={name: ckpt.info["trainable_parameters"] for name, ckpt in runs.items()},
    )


class PhantomExperimentResult(BaseModel):
    pretrain_test_dsc: float
    kgpl_test_dsc: float
    improvement: float
    refinement_agreement: float
    pretrain_trainable_parameters: int
    kgpl_trainable_parameters: int


def run_phantom_experiment(
    spec: PhantomSpec = PhantomSpec(),
    count: int = 300,
    backbone: BackboneConfig = BackboneConfig(stage_channels=[8, 16, 32], input_size=(32, 32, 32)),
    cfg: TrainConfig = TrainConfig(),
    encoder: Optional[TextEncoder] = None,
    knowledge_config: KnowledgeConfig = KnowledgeConfig(),
    loss_cfg: LossConfig = LossConfig(),
    out_dir: Optional[Path] = None,
) -> PhantomExperimentResult:
    """
    Pretrain a tissue model on noisy phantom labels, fine-tune it with
    knowledge prompts on clean labels, then pretrain a structure model on
    the tuned tissue predictions and score how well the cascade's structure
    labels refine its tissue labels.
    """
    encoder = encoder or stub_encoder(hidden_dim=knowledge_config.hidden_dim)
    rng = np.random.default_rng(spec.seed)
    samples = [
        generate_phantom(spec.model_copy(update={"seed": spec.seed + i}), random_attributes(rng), f"sub-{i:04d}")
        for i in range(count)
    ]
    parts = split(samples, seed=spec.seed)
    noisy = PhantomDataset(parts["train"], cfg.crop, augment=cfg.augment, label_noise=cfg.label_noise, seed=cfg.seed)
    clean = PhantomDataset(parts["train"], cfg.crop, augment=cfg.augment, seed=cfg.seed)
    val = PhantomDataset(parts["val"], cfg.crop)
    test = PhantomDataset(parts["test"], cfg.crop)
    out_dir = Path(out_dir) if out_dir else None

    def stage_dir(name: str) -> Optional[Path]:
        return out_dir / name if out_dir else None

    tissue_cfg = stage_backbone(backbone, Stage.TISSUE, spec.tissue_classes, spec.tissue_classes)
    pretrain_cfg = cfg.model_copy(update={"mode": TrainMode.PRETRAIN_FULL})
    tissue_data = StageData(Stage.TISSUE, noisy, val)
    tissue = pretrain(build(tissue_cfg), tissue_data, pretrain_cfg, loss_cfg, stage_dir("tissue_pretrain"))
    zero_shot = evaluate_model(tissue.model, test, tissue_data, cfg)

    clean_data = StageData(Stage.TISSUE, clean, val)
    kgpl_cfg = cfg.model_copy(update={"mode": TrainMode.FINETUNE_KGPL})
    tuned = finetune_kgpl(
        tissue, clean_data, encoder, kgpl_cfg, knowledge_config=knowledge_config,
        loss_cfg=loss_cfg, out_dir=stage_dir("tissue_kgpl"),
    )
    tuned_dsc = evaluate_model(tuned.model, test, clean_data, cfg)

    structure_cfg = stage_backbone(backbone, Stage.STRUCTURE, spec.tissue_classes, spec.structure_classes, cfg.structure_with_image)
    structure_data = StageData(Stage.STRUCTURE, noisy, val, spec.tissue_classes, cfg.structure_with_image)
    structure = pretrain(
        build(structure_cfg), structure_data, pretrain_cfg, loss_cfg, stage_dir("structure_pretrain"), tissue_ckpt=tuned
    )

    table = spec.structure_to_tissue()
    agreements = []
    for sample in test.samples:
        maps = cascade_predict(tuned, structure, sample.volume)
        agreements.append(refinement_agreement(maps["structure"], maps["tissue"], table))

    result = PhantomExperimentResult(
        pretrain_test_dsc=zero_shot,
        kgpl_test_dsc=tuned_dsc,
        improvement=tuned_dsc - zero_shot,
        refinement_agreement=float(np.mean(agreements)) if agreements else float("nan"),
        pretrain_trainable_parameters=count_parameters(tissue.model),
        kgpl_trainable_parameters=tuned.info["trainable_parameters"],
    )
    if out_dir:
        (out_dir / "result.json").write_text(result.model_dump_json(indent=2))
    log.info("experiment: %s", result.model_dump())
    return result
