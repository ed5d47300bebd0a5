import math

import numpy as np
import pytest
import torch

from app.core.errors import BadConfig, Divergence, IOFailure, MissingAttributes, ShapeMismatch
from backbones import BackboneConfig, build, count_parameters
from data import PhantomDataset, collate_samples, generate_phantom, random_attributes
from knowledge import KnowledgeConfig
from prompt import PromptConfig
from train import (
    Checkpoint,
    Stage,
    StageData,
    TrainConfig,
    TrainMode,
    build_optimizer,
    build_scheduler,
    cascade_predict,
    finetune_full,
    finetune_kgpl,
    finetune_random_prompts,
    fit,
    knowledge_block,
    load_checkpoint,
    lr_at,
    predicted_tissue_input,
    pretrain,
    run_comparison,
    save_checkpoint,
    stage_backbone,
    stage_inputs,
    structure_with_image,
)

KNOWLEDGE = KnowledgeConfig(fixed_n=8, hidden_dim=64)
PROMPTS = PromptConfig(num_tokens=8, hidden_dim=64)
TINY_NET = BackboneConfig(stage_channels=[4, 8], input_size=(16, 16, 16))


def _samples(spec, count, with_attrs=True):
    rng = np.random.default_rng(spec.seed)
    return [
        generate_phantom(
            spec.model_copy(update={"seed": spec.seed + i}),
            random_attributes(rng),
            subject_id=f"sub-{i:04d}",
        ).model_copy(update={} if with_attrs else {"attrs": None})
        for i in range(count)
    ]


def _tissue_data(spec, count=4, val=True, **kwargs):
    samples = _samples(spec, count + 2)
    return StageData(
        Stage.TISSUE,
        PhantomDataset(samples[:count], **kwargs),
        PhantomDataset(samples[count:]) if val else None,
    )


def _tissue_checkpoint(spec):
    model = build(stage_backbone(TINY_NET, Stage.TISSUE, spec.tissue_classes, spec.tissue_classes))
    return Checkpoint(model=model, stage=Stage.TISSUE, mode=TrainMode.PRETRAIN_FULL)


def _cfg(mode=TrainMode.PRETRAIN_FULL, **fields):
    values = {"lr": 1e-2, "max_epochs": 2, "batch_size": 2, "warmup_epochs": 0, "mode": mode}
    values.update(fields)
    return TrainConfig(**values)


# schedule
def test_lr_schedule_shape():
    cfg = TrainConfig(lr=0.1, max_epochs=10, warmup_epochs=2)
    assert lr_at(0, 100, cfg) == 0.0
    assert lr_at(10, 100, cfg) == pytest.approx(0.05)
    assert lr_at(20, 100, cfg) == pytest.approx(0.1)
    assert lr_at(100, 100, cfg) == pytest.approx(0.0, abs=1e-12)
    values = [lr_at(k, 100, cfg) for k in range(101)]
    assert min(values) >= 0.0
    assert max(abs(b - a) for a, b in zip(values, values[1:])) <= 0.1 / 20 + 1e-12
    assert all(b <= a for a, b in zip(values[20:], values[21:]))


def test_scheduler_first_update_is_nonzero():
    cfg = TrainConfig(lr=0.1, max_epochs=10, warmup_epochs=2)
    param = torch.nn.Parameter(torch.ones(2))
    optimizer = build_optimizer([param], cfg)
    build_scheduler(optimizer, 100, cfg)
    assert optimizer.param_groups[0]["lr"] == pytest.approx(lr_at(1, 100, cfg))
    assert optimizer.param_groups[0]["lr"] > 0


def test_optimizer_skips_frozen_parameters():
    frozen = torch.nn.Parameter(torch.ones(3), requires_grad=False)
    live = torch.nn.Parameter(torch.ones(2))
    optimizer = build_optimizer([frozen, live], TrainConfig())
    assert optimizer.param_groups[0]["params"] == [live]


def test_adamw_single_step():
    lr, wd = 0.1, 0.01
    param = torch.nn.Parameter(torch.tensor([1.0, -2.0], dtype=torch.float64))
    optimizer = build_optimizer([param], TrainConfig(lr=lr, weight_decay=wd))
    param.grad = torch.tensor([0.5, 0.1], dtype=torch.float64)
    optimizer.step()
    grad = torch.tensor([0.5, 0.1], dtype=torch.float64)
    expected = torch.tensor([1.0, -2.0], dtype=torch.float64) * (1 - lr * wd) - lr * grad / (grad.abs() + 1e-8)
    assert torch.allclose(param.detach(), expected, atol=1e-9, rtol=0)


# pretraining
def test_pretrain_records_loss_and_history(tiny_spec, tmp_path, caplog):
    data = _tissue_data(tiny_spec, label_noise=0.05)
    model = build(stage_backbone(TINY_NET, Stage.TISSUE, 4, tiny_spec.tissue_classes))
    with caplog.at_level("INFO", logger="kgpl"):
        ckpt = pretrain(model, data, _cfg(), out_dir=tmp_path / "ckpt")
    assert ckpt.info["loss"] == "dice"
    assert ckpt.info["trainable_parameters"] == count_parameters(model)
    assert [r["epoch"] for r in ckpt.history] == [1, 2]
    assert all(math.isfinite(r["train_loss"]) for r in ckpt.history)
    assert "loss=dice" in caplog.text
    assert len((tmp_path / "ckpt" / "train_log.jsonl").read_text().splitlines()) == 2
    assert (tmp_path / "ckpt" / "manifest.json").exists()


class _ConstantTissue(torch.nn.Module):
    """Predicts one tissue class everywhere."""

    def __init__(self, label, num_classes=4):
        super().__init__()
        self.config = TINY_NET.model_copy(update={"num_classes": num_classes})
        self.label = label

    def forward(self, x):
        logits = torch.zeros(x.shape[0], self.config.num_classes, *x.shape[2:])
        logits[:, self.label] = 1.0
        return logits


def test_structure_input_is_predicted_tissue(tiny_spec):
    samples = _samples(tiny_spec, 2)
    data = StageData(Stage.STRUCTURE, PhantomDataset(samples), tissue_model=_ConstantTissue(2), with_image=True)
    assert data.num_tissue_classes == 4
    batch = collate_samples([data.train[0], data.train[1]])
    x, target = stage_inputs(batch, data)
    assert x.shape == (2, 5, 16, 16, 16)
    assert torch.all(x[:, 2] == 1)
    assert x[:, [0, 1, 3]].sum() == 0
    assert torch.equal(x[:, 4:], batch["image"])
    assert torch.equal(target, batch["structure"])
    # ground truth carries more than one tissue
    assert len(torch.unique(batch["tissue"])) > 1


def test_structure_input_matches_cascade(tiny_spec, tiny_sample):
    tissue = _tissue_checkpoint(tiny_spec)
    data = StageData(Stage.STRUCTURE, PhantomDataset([tiny_sample]), tissue_model=tissue.model)
    batch = collate_samples([data.train[0]])
    x, _ = stage_inputs(batch, data)
    labels, expected = predicted_tissue_input(tissue.model, batch["image"])
    assert torch.equal(x, expected)

    structure_cfg = stage_backbone(TINY_NET, Stage.STRUCTURE, tiny_spec.tissue_classes, tiny_spec.structure_classes)
    structure = Checkpoint(model=build(structure_cfg), stage=Stage.STRUCTURE, mode=TrainMode.PRETRAIN_FULL)
    maps = cascade_predict(tissue, structure, data.train.samples[0].volume)
    assert np.array_equal(maps["tissue"].data, labels[0].numpy())


def test_structure_stage_needs_tissue_model(tiny_spec):
    samples = _samples(tiny_spec, 2)
    data = StageData(Stage.STRUCTURE, PhantomDataset(samples), None, tiny_spec.tissue_classes)
    config = stage_backbone(TINY_NET, Stage.STRUCTURE, tiny_spec.tissue_classes, tiny_spec.structure_classes)
    with pytest.raises(BadConfig):
        pretrain(build(config), data, _cfg(max_epochs=1))
    with pytest.raises(BadConfig):
        pretrain(build(config), data, _cfg(max_epochs=1), tissue_ckpt=Checkpoint(
            model=build(config), stage=Stage.STRUCTURE, mode=TrainMode.PRETRAIN_FULL
        ))
    with pytest.raises(BadConfig):
        StageData(Stage.STRUCTURE, PhantomDataset(samples), num_tissue_classes=3, tissue_model=_ConstantTissue(0))
    with pytest.raises(BadConfig):
        StageData(Stage.TISSUE, PhantomDataset(samples), tissue_model=_ConstantTissue(0))


def test_structure_stage_uses_dice_focal(tiny_spec):
    samples = _samples(tiny_spec, 2)
    data = StageData(Stage.STRUCTURE, PhantomDataset(samples), None, tiny_spec.tissue_classes, with_image=True)
    config = stage_backbone(TINY_NET, Stage.STRUCTURE, tiny_spec.tissue_classes, tiny_spec.structure_classes, True)
    assert config.in_channels == tiny_spec.tissue_classes + 1
    ckpt = pretrain(build(config), data, _cfg(max_epochs=1), tissue_ckpt=_tissue_checkpoint(tiny_spec))
    assert ckpt.info["loss"] == "dice_focal"
    assert ckpt.info["with_image"] is True


def test_pretrain_is_deterministic(tiny_spec):
    data = _tissue_data(tiny_spec, augment=True, label_noise=0.05)
    runs = [
        pretrain(build(stage_backbone(TINY_NET, Stage.TISSUE, 4, 4)), data, _cfg()).model.state_dict()
        for _ in range(2)
    ]
    assert all(torch.equal(runs[0][name], runs[1][name]) for name in runs[0])


def test_pretrain_rejects_other_modes(tiny_spec):
    with pytest.raises(BadConfig):
        pretrain(build(TINY_NET), _tissue_data(tiny_spec), _cfg(TrainMode.FINETUNE_FULL))


def test_early_stop(tiny_spec):
    data = _tissue_data(tiny_spec)
    model = build(stage_backbone(TINY_NET, Stage.TISSUE, 4, 4))
    # a vanishing learning rate leaves the validation score flat
    ckpt = pretrain(model, data, _cfg(lr=1e-12, max_epochs=10, early_stop_patience=1))
    assert len(ckpt.history) == 2
    assert ckpt.epoch == 1


def test_max_steps(tiny_spec):
    data = _tissue_data(tiny_spec, count=4, val=False)
    ckpt = pretrain(build(stage_backbone(TINY_NET, Stage.TISSUE, 4, 4)), data, _cfg(max_epochs=5, batch_size=1, max_steps=6))
    assert len(ckpt.history) == 2


def test_divergence(tiny_spec, monkeypatch):
    monkeypatch.setattr("train.loops.loss_for_stage", lambda stage, cfg: lambda probs, target: probs.sum() * math.nan)
    with pytest.raises(Divergence):
        pretrain(build(stage_backbone(TINY_NET, Stage.TISSUE, 4, 4)), _tissue_data(tiny_spec), _cfg())


def test_empty_training_set():
    with pytest.raises(BadConfig):
        fit(build(TINY_NET), StageData(Stage.TISSUE, PhantomDataset([])), _cfg())


# fine-tuning
def test_knowledge_block_groups(tiny_spec, small_encoder, store):
    data = _tissue_data(tiny_spec, val=False)
    block = knowledge_block(data.train, small_encoder, KNOWLEDGE)
    assert block.shape == (8, 64)
    cached = knowledge_block(data.train, small_encoder, KNOWLEDGE, store=store)
    assert np.allclose(block, cached, atol=1e-6)


def test_finetune_kgpl_freezes_encoder(tiny_spec, small_encoder):
    base = _tissue_checkpoint(tiny_spec)
    data = _tissue_data(tiny_spec, count=4, val=False)
    cfg = _cfg(TrainMode.FINETUNE_KGPL, batch_size=1, max_epochs=3, max_steps=10)
    ckpt = finetune_kgpl(base, data, small_encoder, cfg, PROMPTS, KNOWLEDGE)

    for name, param in ckpt.model.encoder.named_parameters():
        assert torch.equal(param, dict(base.model.encoder.named_parameters())[name]), name
    assert base.model.prompts is None
    assert ckpt.info["encoder_frozen"] is True
    assert ckpt.info["trainable_parameters"] < ckpt.info["total_parameters"]
    assert ckpt.info["trainable_partitions"] == {"encoder": False, "decoder": True, "prompt": True}

    block = torch.from_numpy(knowledge_block(data.train, small_encoder, KNOWLEDGE))
    for lid in ckpt.prompt_config.injection_layers:
        assert not torch.allclose(ckpt.model.prompts.tokens[lid].detach(), block)


def test_finetune_kgpl_needs_attributes(tiny_spec, small_encoder):
    data = StageData(Stage.TISSUE, PhantomDataset(_samples(tiny_spec, 2, with_attrs=False)))
    with pytest.raises(MissingAttributes):
        finetune_kgpl(_tissue_checkpoint(tiny_spec), data, small_encoder, _cfg(TrainMode.FINETUNE_KGPL), PROMPTS, KNOWLEDGE)


def test_finetune_mode_must_match(tiny_spec, small_encoder):
    data = _tissue_data(tiny_spec, val=False)
    with pytest.raises(BadConfig):
        finetune_kgpl(_tissue_checkpoint(tiny_spec), data, small_encoder, _cfg(TrainMode.FINETUNE_FULL), PROMPTS, KNOWLEDGE)


def test_finetune_random_prompts(tiny_spec):
    base = _tissue_checkpoint(tiny_spec)
    data = _tissue_data(tiny_spec, val=False)
    ckpt = finetune_random_prompts(base, data, _cfg(TrainMode.FINETUNE_RANDOM_PROMPTS, max_epochs=1), PROMPTS)
    assert ckpt.info["encoder_frozen"] is True
    for tokens in ckpt.model.prompts.tokens.values():
        assert tokens.abs().sum() > 0
    assert ckpt.info["trainable_parameters"] < ckpt.info["total_parameters"]


def test_finetune_full(tiny_spec):
    base = _tissue_checkpoint(tiny_spec)
    ckpt = finetune_full(base, _tissue_data(tiny_spec, val=False), _cfg(TrainMode.FINETUNE_FULL, max_epochs=1))
    assert ckpt.model.prompts is None
    assert ckpt.info["trainable_partitions"]["encoder"] is True
    assert ckpt.info["trainable_parameters"] == ckpt.info["total_parameters"]
    moved = any(
        not torch.equal(a, b)
        for a, b in zip(ckpt.model.encoder.parameters(), base.model.encoder.parameters())
    )
    assert moved


# checkpoints and cascade
def test_checkpoint_round_trip(tiny_spec, tmp_path):
    base = _tissue_checkpoint(tiny_spec)
    ckpt = finetune_random_prompts(
        base, _tissue_data(tiny_spec, val=False), _cfg(TrainMode.FINETUNE_RANDOM_PROMPTS, max_epochs=1), PROMPTS
    )
    directory = save_checkpoint(ckpt, tmp_path / "ckpt")
    assert {p.name for p in directory.iterdir()} >= {"manifest.json", "encoder.kgt", "decoder.kgt", "prompt.kgt"}
    loaded = load_checkpoint(directory, with_optimizer=True)
    assert loaded.prompt_config == ckpt.prompt_config
    assert loaded.mode == TrainMode.FINETUNE_RANDOM_PROMPTS
    assert loaded.optimizer_state is not None
    x = torch.randn(1, 1, 16, 16, 16)
    loaded.model.eval()
    ckpt.model.eval()
    with torch.no_grad():
        assert torch.equal(loaded.model(x), ckpt.model(x))


def test_load_missing_checkpoint(tmp_path):
    with pytest.raises(IOFailure):
        load_checkpoint(tmp_path / "nothing")


def test_cascade_channels(tiny_spec, tiny_sample):
    tissue = _tissue_checkpoint(tiny_spec)
    structure_cfg = stage_backbone(TINY_NET, Stage.STRUCTURE, tiny_spec.tissue_classes, tiny_spec.structure_classes)
    structure = Checkpoint(model=build(structure_cfg), stage=Stage.STRUCTURE, mode=TrainMode.PRETRAIN_FULL)
    maps = cascade_predict(tissue, structure, tiny_sample.volume)
    assert maps["tissue"].shape == maps["structure"].shape == (16, 16, 16)
    assert maps["tissue"].num_classes == tiny_spec.tissue_classes
    assert maps["structure"].num_classes == tiny_spec.structure_classes

    with_image = stage_backbone(TINY_NET, Stage.STRUCTURE, tiny_spec.tissue_classes, tiny_spec.structure_classes, True)
    mismatched = Checkpoint(model=build(with_image), stage=Stage.STRUCTURE, mode=TrainMode.PRETRAIN_FULL)
    with pytest.raises(ShapeMismatch):
        cascade_predict(tissue, mismatched, tiny_sample.volume)
    mismatched.info["with_image"] = True
    assert cascade_predict(tissue, mismatched, tiny_sample.volume)["structure"].shape == (16, 16, 16)


def test_cascade_is_deterministic(tiny_spec, tiny_sample):
    tissue = _tissue_checkpoint(tiny_spec)
    structure_cfg = stage_backbone(TINY_NET, Stage.STRUCTURE, tiny_spec.tissue_classes, tiny_spec.structure_classes)
    structure = Checkpoint(model=build(structure_cfg), stage=Stage.STRUCTURE, mode=TrainMode.PRETRAIN_FULL)
    first = cascade_predict(tissue, structure, tiny_sample.volume)
    second = cascade_predict(tissue, structure, tiny_sample.volume)
    assert np.array_equal(first["tissue"].data, second["tissue"].data)
    assert np.array_equal(first["structure"].data, second["structure"].data)


def test_structure_with_image_reads_checkpoint(tiny_spec):
    config = stage_backbone(TINY_NET, Stage.STRUCTURE, tiny_spec.tissue_classes, tiny_spec.structure_classes, True)
    ckpt = Checkpoint(model=build(config), stage=Stage.STRUCTURE, mode=TrainMode.PRETRAIN_FULL, info={"with_image": True})
    assert structure_with_image(ckpt, tiny_spec.tissue_classes) is True
    ckpt.info["with_image"] = False
    with pytest.raises(ShapeMismatch):
        structure_with_image(ckpt, tiny_spec.tissue_classes)


def test_run_comparison(tiny_spec, small_encoder, tmp_path):
    base = _tissue_checkpoint(tiny_spec)
    data = _tissue_data(tiny_spec, val=False)
    test = PhantomDataset(_samples(tiny_spec.model_copy(update={"seed": 40}), 2))
    result = run_comparison(
        base, data, test, small_encoder, _cfg(max_epochs=1), PROMPTS, KNOWLEDGE, out_dir=tmp_path / "cmp"
    )
    assert set(result.reports) == {"knowledge", "random"}
    assert result.trainable_parameters["knowledge"] == result.trainable_parameters["random"]
    assert result.comparison.test.n == tiny_spec.num_tissues
    assert (tmp_path / "cmp" / "compare.json").exists()
    assert (tmp_path / "cmp" / "knowledge.csv").exists()


FREEZE_NETS = [
    TINY_NET,
    BackboneConfig(kind="patch_attention", stage_channels=[8], patch_size=4, hidden_size=32, num_blocks=2),
    BackboneConfig(kind="windowed_attention", stage_channels=[8, 16], patch_size=2, window_size=4),
]


@pytest.mark.parametrize("net", FREEZE_NETS, ids=lambda net: net.kind.value)
@pytest.mark.parametrize("mode", [TrainMode.FINETUNE_KGPL, TrainMode.FINETUNE_RANDOM_PROMPTS])
def test_freeze_contract(tiny_spec, small_encoder, net, mode):
    model = build(stage_backbone(net, Stage.TISSUE, 1, tiny_spec.tissue_classes))
    base = Checkpoint(model=model, stage=Stage.TISSUE, mode=TrainMode.PRETRAIN_FULL)
    data = _tissue_data(tiny_spec, count=4, val=False)
    cfg = _cfg(mode, batch_size=1, max_epochs=3, max_steps=10)
    if mode == TrainMode.FINETUNE_KGPL:
        ckpt = finetune_kgpl(base, data, small_encoder, cfg, PROMPTS, KNOWLEDGE)
    else:
        ckpt = finetune_random_prompts(base, data, cfg, PROMPTS)

    before = dict(base.model.named_parameters())
    after = dict(ckpt.model.named_parameters())
    for name, param in ckpt.model.encoder.named_parameters():
        assert torch.equal(param, dict(base.model.encoder.named_parameters())[name]), name
        assert param.grad is None
    decoder_moved = [not torch.equal(after[name], before[name]) for name in before if name.startswith("decoder.")]
    assert any(decoder_moved)
    assert ckpt.info["trainable_parameters"] < count_parameters(base.model)
