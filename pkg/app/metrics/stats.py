import math
from typing import Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel
from scipy import stats

from app.core.errors import MismatchedClasses, ShapeMismatch

from .report import per_class, row_keys


class PairedTest(BaseModel):
    n: int
    mean_delta: float
    t_statistic: float
    p_value: float


class ClassDelta(BaseModel):
    class_name: str
    a: float
    b: float
    delta: float


class Comparison(BaseModel):
    metric: str
    classes: list[ClassDelta]
    test: PairedTest


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> PairedTest:
    """Two-sided paired t-test on the deltas b - a."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 1:
        raise ShapeMismatch(f"paired test needs two equal-length non-empty samples, got {a.shape} and {b.shape}")
    deltas = b - a
    mean = float(deltas.mean())
    if np.all(deltas == deltas[0]):
        # zero variance: scipy returns nan here
        if mean == 0.0:
            return PairedTest(n=a.size, mean_delta=0.0, t_statistic=0.0, p_value=1.0)
        return PairedTest(n=a.size, mean_delta=mean, t_statistic=math.copysign(math.inf, mean), p_value=0.0)
    result = stats.ttest_rel(b, a)
    return PairedTest(
        n=a.size, mean_delta=mean, t_statistic=float(result.statistic), p_value=float(result.pvalue)
    )


def _keyed(table: pd.DataFrame) -> pd.DataFrame:
    rows = per_class(table)
    keys = row_keys(rows)
    if len(set(keys)) != len(keys):
        raise MismatchedClasses("report lists a class more than once")
    return rows.set_index(pd.Index(keys))


def compare_reports(a: pd.DataFrame, b: pd.DataFrame, metric: str = "dsc") -> Comparison:
    """Per-class deltas (b - a) of ``metric`` and a paired t-test over classes."""
    rows_a, rows_b = _keyed(a), _keyed(b)
    if set(rows_a.index) != set(rows_b.index):
        raise MismatchedClasses(
            f"class sets differ: {sorted(set(rows_a.index) ^ set(rows_b.index))}"
        )
    names = list(rows_a.index)
    values_a = [float(rows_a.loc[name, metric]) for name in names]
    values_b = [float(rows_b.loc[name, metric]) for name in names]
    classes = [
        ClassDelta(class_name=name, a=va, b=vb, delta=vb - va)
        for name, va, vb in zip(names, values_a, values_b)
    ]
    return Comparison(metric=metric, classes=classes, test=paired_t_test(values_a, values_b))
