import json
import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from app.core.errors import EmptyMask, IOFailure, ShapeMismatch, UnsupportedFormat
from app.core.models import LabelMap

from .surface import asd, dsc

log = logging.getLogger("kgpl")

AVERAGE = "Average"
COLUMNS = ["class_id", "class_name", "dsc", "asd", "empty_mask"]
# optional leading column naming the segmentation task of each row
TASK = "task"


def class_label(class_id: int, class_names: Optional[Sequence[str]]) -> str:
    if class_names and class_id < len(class_names):
        return class_names[class_id]
    return f"class_{class_id}"


def _with_average(rows: pd.DataFrame) -> pd.DataFrame:
    valid = rows.loc[~rows["empty_mask"]]
    average = {
        "class_id": -1,
        "class_name": AVERAGE,
        "dsc": float(valid["dsc"].mean()) if len(valid) else float("nan"),
        "asd": float(valid["asd"].mean()) if len(valid) else float("nan"),
        "empty_mask": False,
    }
    return pd.concat([rows, pd.DataFrame([average])], ignore_index=True)[COLUMNS]


def report(
    pred: LabelMap,
    gt: LabelMap,
    class_names: Optional[Sequence[str]] = None,
    include_background: bool = False,
) -> pd.DataFrame:
    """
    One row per class present in ``gt`` plus an "Average" row. Classes whose
    ASD is undefined are flagged in ``empty_mask`` and left out of both means.
    """
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"prediction shape {pred.shape} != reference shape {gt.shape}")
    rows = []
    for class_id in gt.present_classes():
        if class_id == 0 and not include_background:
            continue
        try:
            distance, empty = asd(pred, gt, class_id), False
        except EmptyMask:
            distance, empty = float("nan"), True
        rows.append(
            {
                "class_id": class_id,
                "class_name": class_label(class_id, class_names),
                "dsc": dsc(pred, gt, class_id),
                "asd": distance,
                "empty_mask": empty,
            }
        )
    return _with_average(pd.DataFrame(rows, columns=COLUMNS))


def per_class(table: pd.DataFrame) -> pd.DataFrame:
    return table[table["class_name"] != AVERAGE]


def average_row(table: pd.DataFrame) -> pd.Series:
    return table[table["class_name"] == AVERAGE].iloc[0]


def empty_classes(table: pd.DataFrame) -> list[str]:
    rows = per_class(table)
    return list(rows.loc[rows["empty_mask"], "class_name"])


def aggregate_reports(tables: Sequence[pd.DataFrame]) -> pd.DataFrame:
    """Per-class mean over subjects; a class is flagged only if it was empty for every subject."""
    if not tables:
        raise ShapeMismatch("no reports to aggregate")
    rows = pd.concat([per_class(t) for t in tables], ignore_index=True)
    grouped = rows.groupby(["class_id", "class_name"], sort=True)
    merged = grouped.agg(
        dsc=("dsc", "mean"),
        asd=("asd", "mean"),
        empty_mask=("empty_mask", "all"),
    ).reset_index()
    merged["empty_mask"] = merged["empty_mask"].astype(bool)
    return _with_average(merged[COLUMNS])


def refinement_agreement(
    structure: LabelMap, tissue: LabelMap, structure_to_tissue: Sequence[int]
) -> float:
    """Fraction of voxels where the structure map, mapped to tissues, equals the tissue map."""
    if structure.shape != tissue.shape:
        raise ShapeMismatch(f"structure shape {structure.shape} != tissue shape {tissue.shape}")
    table = np.asarray(structure_to_tissue, dtype=np.int64)
    return float((table[structure.data.astype(np.int64)] == tissue.data).mean())


def write_report(table: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        if path.suffix == ".csv":
            table.to_csv(path, index=False)
        elif path.suffix == ".json":
            path.write_text(table.to_json(orient="records", double_precision=15))
        else:
            raise UnsupportedFormat(f"report must be .csv or .json, got {path.name}")
    except OSError as e:
        raise IOFailure(f"cannot write report {path}: {e}") from e
    log.info("report written to %s", path)
    return path


def read_report(path: Path) -> pd.DataFrame:
    path = Path(path)
    try:
        if path.suffix == ".csv":
            table = pd.read_csv(path)
        elif path.suffix == ".json":
            table = pd.DataFrame(json.loads(path.read_text()))
        else:
            raise UnsupportedFormat(f"report must be .csv or .json, got {path.name}")
    except (OSError, ValueError) as e:
        raise IOFailure(f"cannot read report {path}: {e}") from e
    missing = set(COLUMNS) - set(table.columns)
    if missing:
        raise IOFailure(f"{path} is not a report, missing columns {sorted(missing)}")
    table = table.astype({"class_id": int, "class_name": str, "dsc": float, "asd": float, "empty_mask": bool})
    return table[([TASK] if TASK in table.columns else []) + COLUMNS]


def combine_reports(tables: dict[str, pd.DataFrame]) -> pd.DataFrame:
    """Stack per-task reports under a leading ``task`` column."""
    parts = [table.assign(**{TASK: task})[[TASK] + COLUMNS] for task, table in tables.items()]
    return pd.concat(parts, ignore_index=True)


def row_keys(table: pd.DataFrame) -> list[str]:
    """Row identity used for pairing reports: ``task/class_name`` when tasks are present."""
    if TASK in table.columns:
        return [f"{t}/{c}" for t, c in zip(table[TASK], table["class_name"])]
    return list(table["class_name"])
