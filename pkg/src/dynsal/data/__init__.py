"""Fixation data, ground-truth maps, dataset directories and samplers."""
from dynsal.data.dataset import (
    Clip,
    DatasetInfo,
    DatasetSplit,
    ImageBatch,
    SaliencyDataset,
    carve_validation,
    draw_clip_window,
    draw_image_indices,
    load_split_manifest,
    load_video_dir,
    make_split,
    open_dataset,
    sample_image_batch,
    sample_video_batch,
    static_items,
    write_split_manifest,
)
from dynsal.data.fixations import (
    FixationRecord,
    FixationTable,
    RowDiagnostic,
    default_sigma,
    densify,
    downsample_distribution,
    downsample_fixation_map,
    gaussian_kernel,
    group_by_frame,
    load_fixations,
    rasterize,
    read_fixations,
    write_fixations,
)
from dynsal.data.synth import SynthConfig, render_video, synthesize_dataset

__all__ = [
    "Clip",
    "DatasetInfo",
    "DatasetSplit",
    "FixationRecord",
    "FixationTable",
    "ImageBatch",
    "RowDiagnostic",
    "SaliencyDataset",
    "SynthConfig",
    "carve_validation",
    "default_sigma",
    "densify",
    "downsample_distribution",
    "downsample_fixation_map",
    "draw_clip_window",
    "draw_image_indices",
    "gaussian_kernel",
    "group_by_frame",
    "load_fixations",
    "load_split_manifest",
    "load_video_dir",
    "make_split",
    "open_dataset",
    "rasterize",
    "read_fixations",
    "render_video",
    "sample_image_batch",
    "sample_video_batch",
    "static_items",
    "synthesize_dataset",
    "write_fixations",
    "write_split_manifest",
]
