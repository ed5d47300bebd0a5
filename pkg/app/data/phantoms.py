"""
Synthetic brain-like phantoms.

A phantom is a deformed ellipsoid split into concentric shells, one tissue
class per shell (innermost first). Each shell is cut into angular sectors
around the first axis, one structure class per sector, so structure labels
refine tissue labels by construction. The innermost shell grows with the
subject's age, scaled by ``age_effect``.
"""

import logging
from typing import Optional

import numpy as np

from app.core.errors import BadSpec
from app.core.models import LabelMap, Sex, SubjectAttributes, Volume, label_dtype

from .models import PhantomSpec, Sample

log = logging.getLogger("kgpl")

DIAGNOSES = (None, "mild cognitive impairment", "Alzheimer's disease", "autism spectrum disorder")
# shells start at this normalized radius and end at OUTER_RADIUS
INNER_RADIUS = 0.1
OUTER_RADIUS = 0.85
AGE_SCALE = 100.0


def base_thresholds(num_tissues: int) -> np.ndarray:
    """Outer normalized radius of each shell, e.g. [0.35, 0.6, 0.85] for three tissues."""
    steps = np.arange(1, num_tissues + 1)
    return INNER_RADIUS + (OUTER_RADIUS - INNER_RADIUS) * steps / num_tissues


def shell_thresholds(spec: PhantomSpec, age_years: int) -> np.ndarray:
    """Shell radii for a subject; only the innermost moves, by at most half the gap to the next."""
    radii = base_thresholds(spec.num_tissues)
    following = radii[1] if spec.num_tissues > 1 else 1.0
    drift = spec.age_effect * min(age_years, AGE_SCALE) / AGE_SCALE
    radii[0] += drift * (following - radii[0]) / 2.0
    return radii


def tissue_means(spec: PhantomSpec) -> np.ndarray:
    """Positive mean intensity per tissue, at least 4 sigma apart."""
    gap = max(4.0 * spec.noise_sigma, 0.5)
    return 1.0 + gap * np.arange(spec.num_tissues)


def _normalized_radius(spec: PhantomSpec, rng: np.random.Generator):
    n = spec.size
    axis = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    x, y, z = np.meshgrid(axis, axis, axis, indexing="ij")
    semi_axes = 0.85 + 0.15 * rng.random(3)
    radius = np.sqrt((x / semi_axes[0]) ** 2 + (y / semi_axes[1]) ** 2 + (z / semi_axes[2]) ** 2)
    azimuth = np.arctan2(z, y)
    polar = np.arccos(np.clip(x / np.maximum(np.sqrt(x**2 + y**2 + z**2), 1e-12), -1.0, 1.0))
    lobes = rng.integers(2, 5, size=2)
    phases = rng.uniform(0, 2 * np.pi, size=2)
    bumps = np.sin(lobes[0] * azimuth + phases[0]) * np.sin(lobes[1] * polar + phases[1])
    return radius / (1.0 + 0.08 * bumps), azimuth


def generate_phantom(
    spec: PhantomSpec, attrs: SubjectAttributes, subject_id: str = ""
) -> Sample:
    """Deterministic in (spec, attrs); geometry and noise depend on ``spec.seed`` only."""
    if spec.num_structures % spec.num_tissues:
        raise BadSpec("num_structures must be a multiple of num_tissues")
    rng = np.random.default_rng(spec.seed)
    radius, azimuth = _normalized_radius(spec, rng)

    radii = shell_thresholds(spec, attrs.age_years)
    tissue = np.zeros(radius.shape, dtype=np.int64)
    for label in range(spec.num_tissues, 0, -1):
        tissue[radius < radii[label - 1]] = label

    per = spec.structures_per_tissue
    sector = np.minimum(((azimuth + np.pi) / (2 * np.pi) * per).astype(np.int64), per - 1)
    structure = np.where(tissue > 0, (tissue - 1) * per + sector + 1, 0)

    means = tissue_means(spec)
    intensity = np.zeros(radius.shape, dtype=np.float64)
    foreground = tissue > 0
    intensity[foreground] = means[tissue[foreground] - 1]
    if spec.noise_sigma > 0:
        noise = rng.normal(0.0, spec.noise_sigma, size=radius.shape)
        intensity[foreground] += noise[foreground]
    # background stays exactly zero, foreground strictly positive
    intensity[foreground] = np.maximum(intensity[foreground], 1e-3)

    log.debug("phantom %s: age=%d innermost radius %.3f", subject_id or "-", attrs.age_years, radii[0])
    geometry = {"spacing": spec.spacing}
    return Sample(
        volume=Volume(data=intensity.astype(np.float32), **geometry),
        tissue=LabelMap.from_array(tissue, spec.tissue_classes, **geometry),
        structure=LabelMap.from_array(structure, spec.structure_classes, **geometry),
        attrs=attrs,
        subject_id=subject_id,
    )


def random_attributes(rng: np.random.Generator) -> SubjectAttributes:
    return SubjectAttributes(
        age_years=int(rng.integers(5, 96)),
        sex=(Sex.MALE, Sex.FEMALE)[int(rng.integers(0, 2))],
        diagnosis=DIAGNOSES[int(rng.integers(0, len(DIAGNOSES)))],
    )


def label_boundary(labels: np.ndarray) -> np.ndarray:
    """Voxels with a 6-neighbour of a different label."""
    edge = np.zeros(labels.shape, dtype=bool)
    for axis in range(labels.ndim):
        differs = np.diff(labels, axis=axis) != 0
        lower = [slice(None)] * labels.ndim
        upper = [slice(None)] * labels.ndim
        lower[axis] = slice(None, -1)
        upper[axis] = slice(1, None)
        edge[tuple(lower)] |= differs
        edge[tuple(upper)] |= differs
    return edge


def corrupt_boundary_labels(
    label_map: LabelMap, fraction: float = 0.05, rng: Optional[np.random.Generator] = None
) -> LabelMap:
    """
    Sub-optimal labels: relabel ``fraction`` of the boundary voxels to the
    label of one of their differently labelled 6-neighbours.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    labels = label_map.data.astype(np.int64)
    candidates = np.argwhere(label_boundary(labels))
    count = int(round(fraction * len(candidates)))
    if count == 0:
        return label_map
    chosen = candidates[rng.choice(len(candidates), size=count, replace=False)]
    padded = np.pad(labels, 1, mode="edge")
    corrupted = labels.copy()
    offsets = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]])
    for voxel in chosen:
        own = labels[tuple(voxel)]
        around = [padded[tuple(voxel + 1 + o)] for o in offsets]
        others = [v for v in around if v != own]
        corrupted[tuple(voxel)] = others[int(rng.integers(0, len(others)))]
    return LabelMap(
        data=corrupted.astype(label_dtype(label_map.num_classes)),
        num_classes=label_map.num_classes,
        spacing=label_map.spacing,
        origin=label_map.origin,
    )


TISSUE_NAMES = {3: ("CSF", "GM", "WM")}


def class_names(spec: PhantomSpec, stage: str) -> list[str]:
    """Display names per label: tissues (CSF/GM/WM for three tissues), structures as ``<tissue>_<sector>``."""
    tissues = list(TISSUE_NAMES.get(spec.num_tissues, [f"tissue_{t}" for t in range(1, spec.num_tissues + 1)]))
    if stage == "tissue":
        return ["background"] + tissues
    per = spec.structures_per_tissue
    return ["background"] + [f"{tissues[(s - 1) // per]}_{(s - 1) % per + 1}" for s in range(1, spec.num_structures + 1)]
