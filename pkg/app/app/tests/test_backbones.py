import pytest
import torch

from app.core.errors import BadConfig, ShapeMismatch
from backbones import (
    BackboneConfig,
    BackboneKind,
    SegmentationModel,
    build,
    count_parameters,
    partition_of,
    partition_parameters,
    set_trainable,
    trainable_partitions,
)
from prompt import ProjectionPath, PromptConfig, randomize_prompts

CONFIGS = {
    BackboneKind.CONV_UNET: BackboneConfig(kind="conv_unet", num_classes=4, stage_channels=[8, 16, 32]),
    BackboneKind.PATCH_ATTENTION: BackboneConfig(
        kind="patch_attention", num_classes=4, stage_channels=[8], patch_size=4, hidden_size=32, num_blocks=4
    ),
    BackboneKind.WINDOWED_ATTENTION: BackboneConfig(
        kind="windowed_attention", num_classes=4, stage_channels=[8, 16, 32], patch_size=2, window_size=4
    ),
}
SMALL_PROMPTS = PromptConfig(num_tokens=4, hidden_dim=8)


def _input(batch=2, channels=1, size=16, seed=1):
    return torch.randn(batch, channels, size, size, size, generator=torch.Generator().manual_seed(seed))


@pytest.mark.parametrize("kind", list(CONFIGS))
def test_output_shape_and_finite(kind):
    model = build(CONFIGS[kind]).eval()
    logits = model(_input())
    assert logits.shape == (2, 4, 16, 16, 16)
    assert torch.isfinite(logits).all()


@pytest.mark.parametrize("kind", list(CONFIGS))
def test_prompts_keep_output_shape(kind):
    model = build(CONFIGS[kind]).eval()
    x = _input()
    plain = model(x)
    randomize_prompts(model.attach_prompts(SMALL_PROMPTS), seed=3)
    prompted = model(x)
    assert prompted.shape == plain.shape
    assert not torch.allclose(prompted, plain)
    assert torch.equal(model(x, prompts=None), prompted)


@pytest.mark.parametrize("kind", list(CONFIGS))
def test_eval_forward_is_deterministic(kind):
    first, second = build(CONFIGS[kind]).eval(), build(CONFIGS[kind]).eval()
    x = _input()
    assert torch.equal(first(x), first(x))
    assert torch.equal(first(x), second(x))


def test_seed_changes_weights():
    a = build(CONFIGS[BackboneKind.CONV_UNET])
    b = build(CONFIGS[BackboneKind.CONV_UNET].model_copy(update={"seed": 1}))
    assert not torch.equal(a.decoder.head.weight, b.decoder.head.weight)


def test_patch_attention_token_count():
    model = build(CONFIGS[BackboneKind.PATCH_ATTENTION])
    assert model.encoder.grid == (4, 4, 4)
    assert model.encoder.pos_embed.shape[-1] == 64


@pytest.mark.parametrize(
    "kind, layers, path",
    [
        (BackboneKind.CONV_UNET, ["enc2", "enc3"], ProjectionPath.AAP_LINEAR),
        (BackboneKind.PATCH_ATTENTION, ["block3", "block4"], ProjectionPath.TRANSPOSE_LINEAR),
        (BackboneKind.WINDOWED_ATTENTION, ["stage2", "stage3"], ProjectionPath.AAP_LINEAR),
    ],
)
def test_default_injection_layers(kind, layers, path):
    state = build(CONFIGS[kind]).attach_prompts(SMALL_PROMPTS)
    assert state.injection_layers == layers
    assert state.path == path


def test_windowed_stage_channels_match_prompts():
    model = build(CONFIGS[BackboneKind.WINDOWED_ATTENTION])
    assert model.layer_channels() == {"stage1": 8, "stage2": 16, "stage3": 32}


@pytest.mark.parametrize(
    "update",
    [
        {"kind": "windowed_attention", "window_size": 5, "patch_size": 2},
        {"stage_channels": [16, 8]},
        {"stage_channels": []},
        {"input_size": (18, 16, 16)},
        {"kind": "patch_attention", "patch_size": 3, "input_size": (12, 12, 12)},
        {"kind": "patch_attention", "patch_size": 4, "hidden_size": 30, "num_heads": 4},
        {"kind": "windowed_attention", "patch_size": 2, "stage_channels": [8, 16, 32], "input_size": (20, 20, 20)},
        {"kind": "windowed_attention", "patch_size": 2, "stage_channels": [6, 16], "num_heads": 4},
    ],
)
def test_bad_configs(update):
    with pytest.raises(BadConfig):
        build(BackboneConfig(**{**CONFIGS[BackboneKind.CONV_UNET].model_dump(), **update}))


def test_input_checks():
    model = build(CONFIGS[BackboneKind.CONV_UNET])
    with pytest.raises(ShapeMismatch):
        model(_input(channels=2))
    with pytest.raises(ShapeMismatch):
        model(torch.zeros(1, 1, 18, 16, 16))
    with pytest.raises(ShapeMismatch):
        build(CONFIGS[BackboneKind.PATCH_ATTENTION])(_input(size=32))


def test_reference_parameter_count():
    model = build(BackboneConfig(in_channels=1, num_classes=2, stage_channels=[2, 4]))
    assert count_parameters(model, "encoder") == 862
    assert count_parameters(model, "decoder") == 414
    assert count_parameters(model, "prompt") == 0
    assert count_parameters(model) == 1276


@pytest.mark.parametrize("kind", list(CONFIGS))
def test_partition_is_exhaustive_and_disjoint(kind):
    model = build(CONFIGS[kind])
    groups = partition_parameters(model)
    assert groups["prompt"] == set()
    model.attach_prompts(SMALL_PROMPTS)
    groups = partition_parameters(model)
    names = {name for name, _ in model.named_parameters()}
    assert set.union(*groups.values()) == names
    assert sum(len(g) for g in groups.values()) == len(names)
    assert groups["prompt"]
    assert all(partition_of(name) == "decoder" for name in groups["decoder"])


def test_skip_convolutions_belong_to_decoder():
    groups = partition_parameters(build(CONFIGS[BackboneKind.CONV_UNET]))
    assert "decoder.skips.0.weight" in groups["decoder"]


def test_partition_of_unknown():
    with pytest.raises(BadConfig):
        partition_of("head.weight")


@pytest.mark.parametrize("kind", list(CONFIGS))
def test_frozen_encoder_survives_a_step(kind):
    model = build(CONFIGS[kind])
    model.attach_prompts(SMALL_PROMPTS)
    set_trainable(model, ("prompt", "decoder"))
    assert trainable_partitions(model) == {"encoder": False, "decoder": True, "prompt": True}
    assert count_parameters(model, trainable_only=True) < count_parameters(model)
    before = {name: p.detach().clone() for name, p in model.encoder.named_parameters()}
    optimizer = torch.optim.AdamW([p for p in model.parameters() if p.requires_grad], lr=1e-2, weight_decay=1e-2)
    model(_input()).pow(2).mean().backward()
    optimizer.step()
    for name, p in model.encoder.named_parameters():
        assert p.grad is None
        assert torch.equal(p, before[name])
    assert model.prompts.tokens[model.prompts.injection_layers[0]].grad.abs().sum() > 0


def test_set_trainable_unknown_partition():
    with pytest.raises(BadConfig):
        set_trainable(build(CONFIGS[BackboneKind.CONV_UNET]), ("encoder", "head"))


@pytest.mark.parametrize("stages, shift", [([4], (0, 1, 0)), ([4, 8, 8], (4, 0, 4))])
def test_circular_translation(stages, shift):
    config = BackboneConfig(
        stage_channels=stages, num_classes=3, input_size=(8, 8, 8), padding_mode="circular"
    )
    model = build(config).double().eval()
    x = torch.randn(1, 1, 8, 8, 8, dtype=torch.float64)
    shifted = model(torch.roll(x, shift, dims=(2, 3, 4)))
    expected = torch.roll(model(x), shift, dims=(2, 3, 4))
    assert torch.allclose(shifted, expected, atol=1e-5)


def test_attention_parameter_reduction_direction():
    for kind, config in CONFIGS.items():
        model = build(config)
        full = count_parameters(model)
        model.attach_prompts(SMALL_PROMPTS)
        set_trainable(model, ("prompt", "decoder"))
        assert count_parameters(model, trainable_only=True) < full, kind
        assert count_parameters(model, "prompt") > 0


def test_segmentation_model_hooks_are_abstract():
    with pytest.raises(TypeError):
        SegmentationModel(BackboneConfig())

    class EncoderOnly(SegmentationModel):
        def layer_channels(self):
            return {}

        def default_injection_layers(self):
            return []

        def encode(self, x, prompts):
            return [x]

    with pytest.raises(TypeError):
        EncoderOnly(BackboneConfig())
