"""Toolkit for weakly-supervised lesion detection pipelines on CT volumes.

Covers the non-model half of the workflow: box annotations to weak 3D
ground truth, NIfTI-1 volume I/O, connected-component extraction with
size filtering, overlap-based detection matching with scan- and
patient-level metrics, and synthetic phantoms with known answers.
"""

from .annotations import (
    BoxAnnotation,
    SlabConfig,
    extend_to_slab,
    load_annotations,
    rasterize_ground_truth,
)
from .components import (
    Component,
    SizeThreshold,
    connected_components,
    filter_by_size,
    size_percentile,
)
from .evaluation import (
    MatchResult,
    MetricsReport,
    dataset_metrics,
    evaluate_pair,
    match_scan,
    write_report,
)
from .grid import Box3D, GridKind, LabelScheme, VoxelGrid
from .nifti import NiftiFormatError, load_volume, save_volume
from .phantom import (
    PerturbationSpec,
    PhantomSpec,
    generate_phantom,
    perturb_to_prediction,
)
from .render import window_render

__version__ = "0.1.0"

__all__ = [
    "Box3D",
    "BoxAnnotation",
    "Component",
    "GridKind",
    "LabelScheme",
    "MatchResult",
    "MetricsReport",
    "NiftiFormatError",
    "PerturbationSpec",
    "PhantomSpec",
    "SizeThreshold",
    "SlabConfig",
    "VoxelGrid",
    "connected_components",
    "dataset_metrics",
    "evaluate_pair",
    "extend_to_slab",
    "filter_by_size",
    "generate_phantom",
    "load_annotations",
    "load_volume",
    "match_scan",
    "perturb_to_prediction",
    "rasterize_ground_truth",
    "save_volume",
    "size_percentile",
    "window_render",
    "__version__",
]
