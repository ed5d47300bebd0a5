# cli.py

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from app.core.config import settings
from app.core.errors import BadConfig, BadSpec, KGPLError, ShapeMismatch
from app.core.experiment import ExperimentConfig, config_hash, load_config
from app.utils.logs import setup_logging
from backbones import BACKBONE_ALIASES, BackboneKind, build
from data import (
    DatasetManifest,
    PhantomDataset,
    class_names,
    load_sample,
    write_phantom_dataset,
)
from knowledge import EmbeddingStore, build_encoder
from metrics import aggregate_reports, combine_reports, compare_reports, read_report, report, write_report
from train import (
    Checkpoint,
    Stage,
    StageData,
    TrainMode,
    cascade_predict,
    finetune_full,
    finetune_kgpl,
    finetune_random_prompts,
    load_checkpoint,
    pretrain,
    stage_backbone,
    structure_with_image,
)

log = logging.getLogger("kgpl")

INIT_MODES = {
    "knowledge": TrainMode.FINETUNE_KGPL,
    "random": TrainMode.FINETUNE_RANDOM_PROMPTS,
    "full": TrainMode.FINETUNE_FULL,
}
BACKBONE_CHOICES = sorted(BACKBONE_ALIASES) + [kind.value for kind in BackboneKind]
SEEDED_SECTIONS = ("phantom", "backbone", "prompt", "train")


def _experiment(args, backbone: Optional[str] = None) -> ExperimentConfig:
    overrides: dict = {}
    if args.seed is not None:
        overrides = {section: {"seed": args.seed} for section in SEEDED_SECTIONS}
    if backbone:
        overrides.setdefault("backbone", {})["kind"] = BACKBONE_ALIASES.get(backbone, backbone)
    if getattr(args, "data", None):
        overrides["paths"] = {"data_dir": str(args.data)}
    return load_config(getattr(args, "config", None), overrides)


def _manifest(data_dir: Path) -> DatasetManifest:
    return DatasetManifest.read(Path(data_dir))


def _tissue_checkpoint(path: Optional[Path]) -> Checkpoint:
    if path is None:
        raise BadConfig("structure stage needs --tissue-ckpt to predict its input")
    ckpt = load_checkpoint(path)
    if ckpt.stage != Stage.TISSUE:
        raise BadConfig(f"{path} holds a {ckpt.stage.value} checkpoint, expected tissue")
    return ckpt


def finetune_with_image(ckpt: Checkpoint, cfg: ExperimentConfig, num_tissue_classes: int) -> bool:
    """Structure checkpoints keep the input layout they were trained with."""
    if ckpt.stage != Stage.STRUCTURE:
        return False
    try:
        with_image = structure_with_image(ckpt, num_tissue_classes)
    except ShapeMismatch as e:
        raise BadConfig(e.detail) from e
    if with_image != cfg.train.structure_with_image:
        log.warning("finetune: checkpoint was trained with_image=%s, ignoring structure_with_image", with_image)
    return with_image


def _stage_data(
    cfg: ExperimentConfig,
    manifest: DatasetManifest,
    stage: Stage,
    label_noise: float,
    with_image: Optional[bool] = None,
    tissue_model=None,
) -> StageData:
    root = cfg.paths.data_dir
    train = PhantomDataset.from_manifest(
        manifest, root, "train", crop=cfg.train.crop, augment=cfg.train.augment,
        label_noise=label_noise, seed=cfg.train.seed,
    )
    val = PhantomDataset.from_manifest(manifest, root, "val", crop=cfg.train.crop)
    return StageData(
        stage=stage,
        train=train,
        val=val,
        num_tissue_classes=manifest.spec.tissue_classes,
        with_image=cfg.train.structure_with_image if with_image is None else with_image,
        tissue_model=tissue_model,
    )


def cmd_phantoms(args) -> int:
    overrides = {"phantom": {"seed": args.seed}} if args.seed is not None else {}
    try:
        spec = load_config(args.spec, overrides).phantom
    except BadConfig as e:
        raise BadSpec(e.detail) from e
    manifest = write_phantom_dataset(spec, args.count, args.out, suffix=args.format)
    print(f"{len(manifest.entries)} samples, manifest {manifest.digest()}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _experiment(args, args.backbone)
    stage = Stage(args.stage)
    manifest = _manifest(cfg.paths.data_dir)
    tissue_ckpt = _tissue_checkpoint(args.tissue_ckpt) if stage == Stage.STRUCTURE else None
    num_classes = manifest.spec.tissue_classes if stage == Stage.TISSUE else manifest.spec.structure_classes
    backbone = stage_backbone(
        cfg.backbone, stage, manifest.spec.tissue_classes, num_classes, cfg.train.structure_with_image
    )
    out = Path(args.out) if args.out else cfg.paths.out_dir / f"{backbone.kind.value}_{stage.value}_pretrain"
    train_cfg = cfg.train.model_copy(update={"mode": TrainMode.PRETRAIN_FULL})
    data = _stage_data(cfg, manifest, stage, cfg.train.label_noise)
    ckpt = pretrain(build(backbone), data, train_cfg, cfg.loss, out, config_hash(cfg), tissue_ckpt=tissue_ckpt)
    log.info("pretrain: loss=%s best epoch %d, checkpoint %s", ckpt.info["loss"], ckpt.epoch, out)
    return 0


def cmd_finetune(args) -> int:
    cfg = _experiment(args)
    ckpt = load_checkpoint(args.ckpt)
    mode = INIT_MODES[args.init]
    manifest = _manifest(cfg.paths.data_dir)
    tissue_model = None
    if ckpt.stage == Stage.STRUCTURE:
        tissue_model = _tissue_checkpoint(args.tissue_ckpt).model
    with_image = finetune_with_image(ckpt, cfg, manifest.spec.tissue_classes)
    data = _stage_data(cfg, manifest, ckpt.stage, 0.0, with_image, tissue_model)
    train_cfg = cfg.train.model_copy(update={"mode": mode})
    out = Path(args.out) if args.out else cfg.paths.out_dir / f"{ckpt.backbone.kind.value}_{ckpt.stage.value}_{args.init}"
    digest = config_hash(cfg)
    if mode == TrainMode.FINETUNE_KGPL:
        encoder = build_encoder(settings, hidden_dim=cfg.knowledge.hidden_dim)
        store = EmbeddingStore(cfg.paths.cache_dir / "embeddings" if cfg.paths.cache_dir else None)
        tuned = finetune_kgpl(
            ckpt, data, encoder, train_cfg, cfg.prompt, cfg.knowledge, cfg.loss, store, out, digest
        )
    elif mode == TrainMode.FINETUNE_RANDOM_PROMPTS:
        tuned = finetune_random_prompts(ckpt, data, train_cfg, cfg.prompt, cfg.loss, out, digest)
    else:
        tuned = finetune_full(ckpt, data, train_cfg, cfg.loss, out, digest)
    log.info(
        "finetune: init=%s encoder_frozen=%s trainable_parameters=%d",
        args.init,
        str(tuned.info["encoder_frozen"]).lower(),
        tuned.info["trainable_parameters"],
    )
    return 0


def cmd_evaluate(args) -> int:
    cfg = _experiment(args)
    tissue_ckpt = load_checkpoint(args.tissue_ckpt)
    structure_ckpt = load_checkpoint(args.structure_ckpt)
    manifest = _manifest(cfg.paths.data_dir)
    entries = manifest.select("test")
    if not entries:
        raise BadConfig(f"test split in {cfg.paths.data_dir} is empty")
    samples = PhantomDataset([load_sample(e, cfg.paths.data_dir) for e in entries], crop=cfg.train.crop).samples

    tables = {"tissue": [], "structure": []}
    for sample in samples:
        maps = cascade_predict(tissue_ckpt, structure_ckpt, sample.volume)
        tables["tissue"].append(report(maps["tissue"], sample.tissue, class_names(manifest.spec, "tissue")))
        tables["structure"].append(
            report(maps["structure"], sample.structure, class_names(manifest.spec, "structure"))
        )
    combined = combine_reports({task: aggregate_reports(rows) for task, rows in tables.items()})
    out = Path(args.out)
    write_report(combined, out)
    write_report(combined, out.with_suffix(".csv" if out.suffix == ".json" else ".json"))
    print(combined.to_string(index=False))
    return 0


def cmd_compare(args) -> int:
    a, b = (read_report(path) for path in args.reports)
    comparison = compare_reports(a, b, metric=args.metric)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(comparison.model_dump_json(indent=2))
    print(
        f"mean delta {comparison.test.mean_delta:+.6f}  t={comparison.test.t_statistic:.6f}  "
        f"p={comparison.test.p_value:.6g}  n={comparison.test.n}"
    )
    return 0


def cmd_serve(args) -> int:
    from main import serve

    serve(host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kgpl", description="Knowledge-guided prompt learning for 3D segmentation")
    parser.add_argument("--seed", type=int, default=None, help="override the phantom, backbone, prompt and training seeds")
    parser.add_argument("--log-level", default=None, help="logging level (default from KGPL_LOG_LEVEL)")
    commands = parser.add_subparsers(dest="command", required=True)

    phantoms = commands.add_parser("phantoms", help="generate a synthetic phantom dataset")
    phantoms.add_argument("--spec", type=Path, default=None, help="TOML file with a [phantom] table")
    phantoms.add_argument("--count", type=int, required=True)
    phantoms.add_argument("--out", type=Path, required=True)
    phantoms.add_argument("--format", default=".nii.gz", choices=[".nii.gz", ".nii", ".kgt"])
    phantoms.set_defaults(handler=cmd_phantoms)

    pre = commands.add_parser("pretrain", help="stage-1 training on sub-optimal labels")
    pre.add_argument("--backbone", required=True, choices=BACKBONE_CHOICES)
    pre.add_argument("--stage", required=True, choices=[s.value for s in Stage])
    pre.add_argument("--config", type=Path, default=None)
    pre.add_argument("--data", type=Path, default=None)
    pre.add_argument("--out", type=Path, default=None)
    pre.add_argument("--tissue-ckpt", type=Path, default=None, help="tissue checkpoint whose predictions feed a structure stage")
    pre.set_defaults(handler=cmd_pretrain)

    fine = commands.add_parser("finetune", help="stage-2 fine-tuning from a pretrained checkpoint")
    fine.add_argument("--init", required=True, choices=sorted(INIT_MODES))
    fine.add_argument("--ckpt", type=Path, required=True)
    fine.add_argument("--config", type=Path, default=None)
    fine.add_argument("--data", type=Path, default=None)
    fine.add_argument("--out", type=Path, default=None)
    fine.add_argument("--tissue-ckpt", type=Path, default=None, help="tissue checkpoint, needed for structure checkpoints")
    fine.set_defaults(handler=cmd_finetune)

    evaluate = commands.add_parser("evaluate", help="cascade prediction and DSC/ASD report on the test split")
    evaluate.add_argument("--tissue-ckpt", type=Path, required=True)
    evaluate.add_argument("--structure-ckpt", type=Path, required=True)
    evaluate.add_argument("--data", type=Path, required=True)
    evaluate.add_argument("--out", type=Path, required=True, help="report.csv or report.json")
    evaluate.add_argument("--config", type=Path, default=None)
    evaluate.set_defaults(handler=cmd_evaluate)

    compare = commands.add_parser("compare", help="paired per-class deltas and t-test between two reports")
    compare.add_argument("--reports", type=Path, nargs=2, required=True, metavar=("A", "B"))
    compare.add_argument("--out", type=Path, required=True)
    compare.add_argument("--metric", default="dsc", choices=["dsc", "asd"])
    compare.set_defaults(handler=cmd_compare)

    serve = commands.add_parser("serve", help="run the text-encoder HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.set_defaults(handler=cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    try:
        return args.handler(args)
    except KGPLError as e:
        log.error("%s: %s", type(e).__name__, e.detail)
        print(f"kgpl {args.command}: {type(e).__name__}: {e.detail}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
