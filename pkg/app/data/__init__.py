from .augment import augment_flip, draw_flip_axes  # noqa: F401
from .datasets import PhantomDataset, collate_samples  # noqa: F401
from .io import load_label_map, load_volume, save_label_map, save_volume  # noqa: F401
from .manifest import MANIFEST_NAME, DatasetManifest, ManifestEntry, load_sample, write_phantom_dataset  # noqa: F401
from .models import PhantomSpec, Sample  # noqa: F401
from .phantoms import class_names, corrupt_boundary_labels, generate_phantom, label_boundary, random_attributes  # noqa: F401
from .preprocess import CropWindow, apply_window, foreground_window, normalize_sample, preprocess, preprocess_sample  # noqa: F401
from .splits import DEFAULT_RATIOS, SPLIT_NAMES, split, split_sizes  # noqa: F401
