"""Saliency evaluation: scores, center-bias baseline and reports."""
from dynsal.metrics.report import (
    METRICS,
    FrameScore,
    FrameTruth,
    MetricReport,
    SkippedFrame,
    evaluate_dataset,
    evaluate_predictions,
    format_report,
    ground_truth_frames,
    read_predictions,
    write_report,
)
from dynsal.metrics.scores import (
    auc_judd,
    cc_metric,
    center_bias_map,
    nss_metric,
    pair_auc,
    shuffled_auc,
    sim_metric,
)

__all__ = [
    "METRICS",
    "FrameScore",
    "FrameTruth",
    "MetricReport",
    "SkippedFrame",
    "auc_judd",
    "cc_metric",
    "center_bias_map",
    "evaluate_dataset",
    "evaluate_predictions",
    "format_report",
    "ground_truth_frames",
    "nss_metric",
    "pair_auc",
    "read_predictions",
    "shuffled_auc",
    "sim_metric",
    "write_report",
]
