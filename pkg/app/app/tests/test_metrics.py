import math

import numpy as np
import pandas as pd
import pytest

from app.core.errors import EmptyMask, IOFailure, MismatchedClasses, ShapeMismatch, UnsupportedFormat
from app.core.models import LabelMap
from metrics import (
    AVERAGE,
    COLUMNS,
    aggregate_reports,
    asd,
    average_row,
    boundary,
    combine_reports,
    compare_reports,
    dsc,
    empty_classes,
    paired_t_test,
    per_class,
    read_report,
    refinement_agreement,
    report,
    row_keys,
    write_report,
)


def _mask(size, voxels, spacing=(1.0, 1.0, 1.0)):
    data = np.zeros((size,) * 3, dtype=np.int64)
    for v in voxels:
        data[tuple(v)] = 1
    return LabelMap.from_array(data, 2, spacing=spacing)


def _blob(size=12, centre=(6, 6, 6), radius=3.0, label=1, num_classes=2):
    grid = np.indices((size,) * 3)
    distance = np.sqrt(sum((g - c) ** 2 for g, c in zip(grid, centre)))
    return LabelMap.from_array(np.where(distance <= radius, label, 0), num_classes)


def _table(values, names=None):
    names = names or [f"c{i}" for i in range(1, len(values) + 1)]
    rows = [
        {"class_id": i + 1, "class_name": n, "dsc": v, "asd": 1.0, "empty_mask": False}
        for i, (n, v) in enumerate(zip(names, values))
    ]
    rows.append({"class_id": -1, "class_name": AVERAGE, "dsc": float(np.mean(values)), "asd": 1.0, "empty_mask": False})
    return pd.DataFrame(rows, columns=COLUMNS)


# dsc
def test_dsc_identity():
    labels = _blob()
    assert dsc(labels, labels, 1) == 1.0
    assert dsc(labels, labels, 0) == 1.0


def test_dsc_disjoint():
    assert dsc(_mask(4, [(0, 0, 0), (0, 0, 1)]), _mask(4, [(3, 3, 3), (3, 3, 2)]), 1) == 0.0


def test_dsc_half_overlap():
    pred = _mask(4, [(0, 0, 0), (0, 0, 1), (0, 0, 2), (0, 0, 3)])
    gt = _mask(4, [(0, 0, 2), (0, 0, 3), (0, 1, 0), (0, 1, 1)])
    assert dsc(pred, gt, 1) == 0.5


def test_dsc_empty_both():
    empty = _mask(4, [])
    assert dsc(empty, empty, 1) == 1.0


def test_dsc_symmetric_and_flip_invariant():
    a, b = _blob(centre=(5, 6, 6)), _blob(centre=(6, 7, 5), radius=2.5)
    assert dsc(a, b, 1) == dsc(b, a, 1)
    flip = LabelMap.from_array(np.flip(a.data, axis=(0, 2)), 2), LabelMap.from_array(np.flip(b.data, axis=(0, 2)), 2)
    assert dsc(*flip, 1) == dsc(a, b, 1)


def test_dsc_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        dsc(_mask(4, []), _mask(5, []), 1)


# asd
def test_boundary_of_cube_excludes_interior():
    mask = np.zeros((5, 5, 5), dtype=bool)
    mask[1:4, 1:4, 1:4] = True
    edge = boundary(mask)
    assert edge.sum() == 26
    assert not edge[2, 2, 2]


def test_asd_identical_is_zero():
    labels = _blob()
    assert asd(labels, labels, 1) == 0.0


def test_asd_single_voxels():
    pred, gt = _mask(8, [(1, 2, 2)]), _mask(8, [(4, 2, 2)])
    assert asd(pred, gt, 1) == 3.0


def test_asd_uses_spacing():
    pred = _mask(8, [(2, 2, 1)], spacing=(1.0, 1.0, 2.0))
    gt = _mask(8, [(2, 2, 4)], spacing=(1.0, 1.0, 2.0))
    assert asd(pred, gt, 1) == 6.0
    assert asd(pred, gt, 1, spacing=(1.0, 1.0, 1.0)) == 3.0


def test_asd_missing_class():
    with pytest.raises(EmptyMask):
        asd(_mask(4, [(1, 1, 1)]), _mask(4, []), 1)
    with pytest.raises(EmptyMask):
        asd(_mask(4, []), _mask(4, [(1, 1, 1)]), 1)


def test_asd_symmetric_and_linear_in_spacing():
    a, b = _blob(centre=(5, 6, 6)), _blob(centre=(6, 7, 5), radius=2.5)
    one = asd(a, b, 1)
    assert one > 0
    assert asd(b, a, 1) == pytest.approx(one, abs=1e-12)
    assert asd(a, b, 1, spacing=(2.0, 2.0, 2.0)) == pytest.approx(2 * one, rel=1e-12)


# report
def test_report_self_comparison():
    labels = LabelMap.from_array(np.maximum(_blob(label=1, num_classes=3).data, _blob(radius=1.5, label=2, num_classes=3).data), 3)
    table = report(labels, labels, ["background", "GM", "WM"])
    rows = per_class(table)
    assert list(rows["class_name"]) == ["GM", "WM"]
    assert (rows["dsc"] == 1.0).all()
    assert (rows["asd"] == 0.0).all()
    assert table.iloc[-1]["class_name"] == AVERAGE
    assert len(rows) == len([c for c in labels.present_classes() if c != 0])


def test_report_average_and_empty_classes():
    gt = LabelMap.from_array(np.maximum(_blob(label=1, num_classes=3).data, _blob(radius=1.5, label=2, num_classes=3).data), 3)
    pred = LabelMap.from_array(np.where(gt.data == 2, 1, gt.data), 3)
    table = report(pred, gt)
    rows = per_class(table)
    assert empty_classes(table) == ["class_2"]
    avg = average_row(table)
    kept = rows.loc[~rows["empty_mask"]]
    assert list(kept["class_id"]) == [1]
    assert avg["dsc"] == pytest.approx(kept["dsc"].iloc[0], abs=1e-12)
    assert avg["dsc"] > rows["dsc"].mean()
    assert avg["asd"] == pytest.approx(kept["asd"].iloc[0], abs=1e-12)
    assert math.isnan(rows.loc[rows["class_id"] == 2, "asd"].iloc[0])


def test_report_average_all_empty():
    gt = _blob()
    pred = LabelMap.from_array(np.zeros(gt.shape, dtype=np.int64), 2)
    avg = average_row(report(pred, gt))
    assert math.isnan(avg["dsc"])
    assert math.isnan(avg["asd"])


def test_report_with_background():
    labels = _blob()
    assert list(per_class(report(labels, labels, include_background=True))["class_id"]) == [0, 1]


def test_aggregate_reports_means_over_subjects():
    first, second = _table([1.0, 0.5]), _table([0.5, 0.5])
    second.loc[1, "empty_mask"] = True
    merged = aggregate_reports([first, second])
    rows = per_class(merged)
    assert list(rows["dsc"]) == [0.75, 0.5]
    assert not rows["empty_mask"].any()
    assert average_row(merged)["dsc"] == pytest.approx(0.625)
    with pytest.raises(ShapeMismatch):
        aggregate_reports([])


def test_report_files_agree(tmp_path):
    gt = _blob(centre=(5, 6, 6))
    table = report(_blob(centre=(6, 6, 6), radius=2.5), gt, ["background", "WM"])
    from_json = read_report(write_report(table, tmp_path / "r.json"))
    from_csv = read_report(write_report(table, tmp_path / "r.csv"))
    assert list(from_json["class_name"]) == list(from_csv["class_name"]) == ["WM", AVERAGE]
    assert np.allclose(from_json["dsc"], from_csv["dsc"], atol=1e-9, rtol=0)
    assert np.allclose(from_json["asd"], from_csv["asd"], atol=1e-9, rtol=0)


def test_report_file_errors(tmp_path):
    with pytest.raises(UnsupportedFormat):
        write_report(_table([1.0]), tmp_path / "r.txt")
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(IOFailure):
        read_report(tmp_path / "bad.csv")
    with pytest.raises(IOFailure):
        read_report(tmp_path / "missing.json")


def test_combined_reports_keep_tasks(tmp_path):
    combined = combine_reports({"tissue": _table([0.9]), "structure": _table([0.8])})
    assert list(combined.columns) == ["task"] + COLUMNS
    keys = row_keys(read_report(write_report(combined, tmp_path / "c.json")))
    assert keys == ["tissue/c1", f"tissue/{AVERAGE}", "structure/c1", f"structure/{AVERAGE}"]


def test_refinement_agreement(tiny_sample, tiny_spec):
    table = tiny_spec.structure_to_tissue()
    assert refinement_agreement(tiny_sample.structure, tiny_sample.tissue, table) == 1.0
    shifted = LabelMap.from_array(np.roll(tiny_sample.structure.data, 3, axis=0), tiny_spec.structure_classes)
    assert refinement_agreement(shifted, tiny_sample.tissue, table) < 1.0


# statistics
def test_paired_t_test_hand_example():
    a = [0.50, 0.60, 0.70, 0.80, 0.90]
    b = [0.51, 0.62, 0.73, 0.84, 0.95]
    # deltas 0.01..0.05: mean 0.03, sd sqrt(0.00025), t = 0.03 / (sd / sqrt(5)) = 3 * sqrt(2)
    result = paired_t_test(a, b)
    assert result.n == 5
    assert result.mean_delta == pytest.approx(0.03, abs=1e-12)
    assert result.t_statistic == pytest.approx(3 * math.sqrt(2), abs=1e-9)
    assert 0.01 < result.p_value < 0.02


def test_paired_t_test_degenerate_cases():
    same = paired_t_test([0.3, 0.4], [0.3, 0.4])
    assert (same.t_statistic, same.p_value) == (0.0, 1.0)
    shifted = paired_t_test([0.25, 0.5], [0.5, 0.75])
    assert shifted.t_statistic == math.inf
    assert shifted.p_value == 0.0
    with pytest.raises(ShapeMismatch):
        paired_t_test([1.0, 2.0], [1.0])


def test_compare_identical_reports():
    comparison = compare_reports(_table([0.9, 0.8, 0.7]), _table([0.9, 0.8, 0.7]))
    assert all(c.delta == 0.0 for c in comparison.classes)
    assert comparison.test.p_value == 1.0
    assert comparison.test.n == 3


def test_compare_reports_pairs_by_name():
    a = _table([0.50, 0.60, 0.70, 0.80, 0.90])
    b = _table([0.95, 0.84, 0.73, 0.62, 0.51], names=["c5", "c4", "c3", "c2", "c1"])
    comparison = compare_reports(a, b)
    assert [c.class_name for c in comparison.classes] == ["c1", "c2", "c3", "c4", "c5"]
    assert comparison.test.t_statistic == pytest.approx(3 * math.sqrt(2), abs=1e-9)


def test_compare_mismatched_classes():
    with pytest.raises(MismatchedClasses):
        compare_reports(_table([0.9, 0.8]), _table([0.9, 0.8], names=["c1", "c9"]))
    with pytest.raises(MismatchedClasses):
        compare_reports(_table([0.9, 0.8], names=["c1", "c1"]), _table([0.9, 0.8], names=["c1", "c1"]))
