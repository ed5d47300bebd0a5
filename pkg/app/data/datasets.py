from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import torch
from torch.utils.data import Dataset

from .augment import augment_flip
from .manifest import DatasetManifest, load_sample
from .models import Sample
from .phantoms import corrupt_boundary_labels
from .preprocess import normalize_sample, preprocess_sample


class PhantomDataset(Dataset):
    """
    In-memory samples served as tensors. Label noise is drawn once per sample;
    flips are redrawn per epoch from a (seed, epoch, index) generator.
    """

    def __init__(
        self,
        samples: Sequence[Sample],
        crop: Optional[Sequence[int]] = None,
        augment: bool = False,
        label_noise: float = 0.0,
        seed: int = 0,
    ):
        self.seed = seed
        self.augment = augment
        self.epoch = 0
        prepared = [preprocess_sample(s, crop) if crop else normalize_sample(s) for s in samples]
        if label_noise > 0:
            prepared = [self._corrupt(s, i, label_noise) for i, s in enumerate(prepared)]
        self.samples: List[Sample] = prepared

    def _corrupt(self, sample: Sample, index: int, fraction: float) -> Sample:
        rng = np.random.default_rng([self.seed, index])
        return sample.model_copy(
            update={
                "tissue": corrupt_boundary_labels(sample.tissue, fraction, rng),
                "structure": corrupt_boundary_labels(sample.structure, fraction, rng),
            }
        )

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest, root: Path, split_name: Optional[str] = None, **kwargs):
        return cls([load_sample(e, root) for e in manifest.select(split_name)], **kwargs)

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, index: int) -> dict:
        sample = self.samples[index]
        if self.augment:
            sample = augment_flip(sample, np.random.default_rng([self.seed, self.epoch, index]))
        return {
            "image": torch.from_numpy(np.array(sample.volume.data, dtype=np.float32))[None],
            "tissue": torch.from_numpy(sample.tissue.data.astype(np.int64)),
            "structure": torch.from_numpy(sample.structure.data.astype(np.int64)),
            "attrs": sample.attrs,
            "subject_id": sample.subject_id,
        }


def collate_samples(items: List[dict]) -> dict:
    return {
        "image": torch.stack([item["image"] for item in items]),
        "tissue": torch.stack([item["tissue"] for item in items]),
        "structure": torch.stack([item["structure"] for item in items]),
        "attrs": [item["attrs"] for item in items],
        "subject_id": [item["subject_id"] for item in items],
    }
