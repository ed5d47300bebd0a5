import copy
import logging
from pathlib import Path
from typing import Callable, Iterable, List, Optional

import numpy as np
import torch
from torch.utils.data import Dataset

from app.core.errors import BadConfig, KGPLError, MissingAttributes
from app.core.models import SubjectAttributes
from backbones import SegmentationModel, set_trainable
from knowledge import (
    EmbeddingStore,
    KnowledgeConfig,
    PromptSentence,
    TextEncoder,
    encode_knowledge,
    group_mean_embedding,
    render_sentence,
)
from losses import LossConfig
from prompt import PromptConfig, PromptState, preinitialize, randomize_prompts

from .loops import fit
from .models import Checkpoint, StageData, TrainConfig, TrainMode

log = logging.getLogger("kgpl")

PromptSetup = Callable[[PromptState], None]


def dataset_attributes(dataset: Dataset) -> List[Optional[SubjectAttributes]]:
    samples = getattr(dataset, "samples", None)
    if samples is not None:
        return [s.attrs for s in samples]
    return [dataset[i]["attrs"] for i in range(len(dataset))]


def subject_sentences(
    attrs: Iterable[Optional[SubjectAttributes]], config: KnowledgeConfig
) -> List[PromptSentence]:
    sentences = []
    for i, subject in enumerate(attrs):
        if subject is None:
            raise MissingAttributes(f"training subject {i} has no attributes")
        sentences.append(render_sentence(subject, config=config))
    return sentences


def knowledge_block(
    dataset: Dataset,
    encoder: TextEncoder,
    config: KnowledgeConfig = KnowledgeConfig(),
    store: Optional[EmbeddingStore] = None,
) -> np.ndarray:
    """(N, D) pre-initialization block: mean over attribute groups of the per-subject embeddings."""
    sentences = subject_sentences(dataset_attributes(dataset), config)
    if store is not None:
        embeddings = [store.get_or_encode(encoder, s, config.fixed_n) for s in sentences]
    else:
        cache = {}
        for s in sentences:
            if s.text not in cache:
                cache[s.text] = encode_knowledge(encoder, s, config.fixed_n)
        embeddings = [cache[s.text] for s in sentences]
    groups = [s.text for s in sentences]
    log.info("knowledge: %d subjects in %d attribute groups", len(sentences), len(set(groups)))
    return group_mean_embedding(embeddings, groups)


def encoder_snapshot(model: SegmentationModel) -> dict[str, torch.Tensor]:
    return {name: p.detach().clone() for name, p in model.encoder.named_parameters()}


def encoder_unchanged(model: SegmentationModel, snapshot: dict[str, torch.Tensor]) -> bool:
    return all(torch.equal(p.detach(), snapshot[name]) for name, p in model.encoder.named_parameters())


def _log_batch_sentences(config: KnowledgeConfig) -> Callable[[dict], None]:
    def hook(batch: dict) -> None:
        if log.isEnabledFor(logging.DEBUG):
            for attrs in batch["attrs"]:
                if attrs is not None:
                    log.debug("batch sentence: %s", render_sentence(attrs, config=config).text)

    return hook


def _prompted_finetune(
    checkpoint: Checkpoint,
    data: StageData,
    cfg: TrainConfig,
    prompt_config: PromptConfig,
    setup: PromptSetup,
    loss_cfg: LossConfig,
    out_dir: Optional[Path],
    config_hash: str,
    on_batch=None,
) -> Checkpoint:
    """Attach prompts, freeze the encoder, train prompts + decoder, check the encoder did not move."""
    model = copy.deepcopy(checkpoint.model)
    state = model.attach_prompts(prompt_config)
    setup(state)
    resolved = prompt_config.model_copy(update={"injection_layers": state.injection_layers, "path": state.path})
    set_trainable(model, ("prompt", "decoder"))
    snapshot = encoder_snapshot(model)
    ckpt = fit(
        model,
        data,
        cfg,
        loss_cfg,
        out_dir=out_dir,
        config_hash=config_hash,
        on_batch=on_batch,
        info={"encoder_frozen": True, "injection_layers": state.injection_layers, "path": state.path.value},
        prompt_config=resolved,
    )
    if not encoder_unchanged(model, snapshot):
        raise KGPLError("encoder parameters changed during prompt fine-tuning")
    log.info("finetune: encoder_frozen=true verified after %d epochs", len(ckpt.history))
    return ckpt


def _check_mode(cfg: TrainConfig, mode: TrainMode) -> None:
    if cfg.mode != mode:
        raise BadConfig(f"expected mode {mode.value}, got {cfg.mode.value}")


def finetune_kgpl(
    checkpoint: Checkpoint,
    data: StageData,
    encoder: TextEncoder,
    cfg: TrainConfig,
    prompt_config: Optional[PromptConfig] = None,
    knowledge_config: KnowledgeConfig = KnowledgeConfig(),
    loss_cfg: LossConfig = LossConfig(),
    store: Optional[EmbeddingStore] = None,
    out_dir: Optional[Path] = None,
    config_hash: str = "",
) -> Checkpoint:
    """Frozen-encoder fine-tuning with prompts pre-initialized from knowledge embeddings."""
    _check_mode(cfg, TrainMode.FINETUNE_KGPL)
    prompt_config = prompt_config or PromptConfig(
        num_tokens=knowledge_config.fixed_n, hidden_dim=knowledge_config.hidden_dim, seed=cfg.seed
    )
    block = knowledge_block(data.train, encoder, knowledge_config, store)

    def setup(state: PromptState) -> None:
        preinitialize(state, block)

    return _prompted_finetune(
        checkpoint, data, cfg, prompt_config, setup, loss_cfg, out_dir, config_hash,
        on_batch=_log_batch_sentences(knowledge_config),
    )


def finetune_random_prompts(
    checkpoint: Checkpoint,
    data: StageData,
    cfg: TrainConfig,
    prompt_config: Optional[PromptConfig] = None,
    loss_cfg: LossConfig = LossConfig(),
    out_dir: Optional[Path] = None,
    config_hash: str = "",
) -> Checkpoint:
    """Same freezing as ``finetune_kgpl``; tokens start from seeded random values instead."""
    _check_mode(cfg, TrainMode.FINETUNE_RANDOM_PROMPTS)
    prompt_config = prompt_config or PromptConfig(seed=cfg.seed)

    def setup(state: PromptState) -> None:
        randomize_prompts(state, seed=prompt_config.seed)

    return _prompted_finetune(checkpoint, data, cfg, prompt_config, setup, loss_cfg, out_dir, config_hash)


def finetune_full(
    checkpoint: Checkpoint,
    data: StageData,
    cfg: TrainConfig,
    loss_cfg: LossConfig = LossConfig(),
    out_dir: Optional[Path] = None,
    config_hash: str = "",
) -> Checkpoint:
    """Every partition trainable, no prompts."""
    _check_mode(cfg, TrainMode.FINETUNE_FULL)
    model = copy.deepcopy(checkpoint.model)
    model.detach_prompts()
    set_trainable(model, ("encoder", "decoder", "prompt"))
    return fit(model, data, cfg, loss_cfg, out_dir, config_hash, info={"encoder_frozen": False})
