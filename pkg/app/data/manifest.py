import hashlib
import json
import logging
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ValidationError

from app.core.errors import IOFailure
from app.core.models import SubjectAttributes

from .io import load_label_map, load_volume, save_label_map, save_volume
from .models import PhantomSpec, Sample
from .phantoms import generate_phantom, random_attributes
from .splits import DEFAULT_RATIOS, split

log = logging.getLogger("kgpl")

MANIFEST_NAME = "manifest.json"


class ManifestEntry(BaseModel):
    subject_id: str
    volume: str
    tissue: str
    structure: str
    attrs: Optional[SubjectAttributes] = None
    split: str
    seed: int


class DatasetManifest(BaseModel):
    """Sample files (relative to the manifest's directory), attributes and split assignment."""

    spec: PhantomSpec
    ratios: List[float] = list(DEFAULT_RATIOS)
    split_seed: int = 0
    entries: List[ManifestEntry] = []

    def write(self, path: Path) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(self.canonical_json())
        except OSError as e:
            raise IOFailure(f"could not write manifest {path}: {e}") from e
        return path

    @classmethod
    def read(cls, path: Path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        try:
            return cls.model_validate_json(path.read_text())
        except OSError as e:
            raise IOFailure(f"could not read manifest {path}: {e}") from e
        except ValidationError as e:
            raise IOFailure(f"invalid manifest {path}: {e}") from e

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, indent=2)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def select(self, split_name: Optional[str] = None) -> List[ManifestEntry]:
        return [e for e in self.entries if split_name is None or e.split == split_name]


def load_sample(entry: ManifestEntry, root: Path) -> Sample:
    root = Path(root)
    return Sample(
        volume=load_volume(root / entry.volume),
        tissue=load_label_map(root / entry.tissue),
        structure=load_label_map(root / entry.structure),
        attrs=entry.attrs,
        subject_id=entry.subject_id,
    )


def write_phantom_dataset(
    spec: PhantomSpec,
    count: int,
    out_dir: Path,
    suffix: str = ".nii.gz",
    ratios: Sequence[float] = DEFAULT_RATIOS,
) -> DatasetManifest:
    """Generate ``count`` phantoms (subject i uses seed ``spec.seed + i``) and their manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    ids = [f"sub-{i:04d}" for i in range(count)]
    assignment = {sid: name for name, members in split(ids, ratios, seed=spec.seed).items() for sid in members}

    entries = []
    for i, sid in enumerate(ids):
        attrs = random_attributes(rng)
        sample = generate_phantom(spec.model_copy(update={"seed": spec.seed + i}), attrs, subject_id=sid)
        names = {kind: f"{sid}_{kind}{suffix}" for kind in ("t1", "tissue", "structure")}
        save_volume(out_dir / names["t1"], sample.volume)
        save_label_map(out_dir / names["tissue"], sample.tissue)
        save_label_map(out_dir / names["structure"], sample.structure)
        entries.append(
            ManifestEntry(
                subject_id=sid,
                volume=names["t1"],
                tissue=names["tissue"],
                structure=names["structure"],
                attrs=attrs,
                split=assignment[sid],
                seed=spec.seed + i,
            )
        )
    manifest = DatasetManifest(spec=spec, ratios=list(ratios), split_seed=spec.seed, entries=entries)
    manifest.write(out_dir / MANIFEST_NAME)
    log.info("phantoms: wrote %d samples to %s (manifest %s)", count, out_dir, manifest.digest()[:12])
    return manifest
