from .report import (  # noqa: F401
    AVERAGE,
    COLUMNS,
    aggregate_reports,
    average_row,
    combine_reports,
    empty_classes,
    per_class,
    read_report,
    refinement_agreement,
    report,
    row_keys,
    write_report,
)
from .stats import ClassDelta, Comparison, PairedTest, compare_reports, paired_t_test  # noqa: F401
from .surface import asd, boundary, dsc  # noqa: F401
