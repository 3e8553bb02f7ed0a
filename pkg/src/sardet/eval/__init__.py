from .metrics import (
    AREA_RANGES,
    IOU_THRESHOLDS,
    RECALL_POINTS,
    EvalReport,
    MatchResult,
    average_precision,
    coco_suite,
    export_pr_curve,
    interpolated_precision,
    match,
    pr_curve_csv,
    precision_recall,
)
