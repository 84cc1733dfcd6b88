"""Benchmark engine for semantic-segmentation attribution.

Four attribution methods (gpa, ega, ria, dea) plus a faithfulness, leakage,
robustness, and runtime metric suite, evaluated against any model that
implements the two-call adapter contract. A built-in deterministic micro
segmentation network with exact gradients makes everything verifiable at
desk scale.
"""

from .attribution import METHOD_NAMES, dea, ega, gpa, ria
from .harness import (
    RunConfig,
    Sample,
    aggregate,
    run_benchmark,
    select_target,
    synth_sample,
    write_records,
)
from .metrics import (
    MetricRow,
    insertion_gain,
    leak_abs,
    offtarget_deletion_drop,
    region_score,
    stability,
    target_deletion_drop,
    time_explanation,
)
from .model import FeatureBundle, MicroModel, ModelAdapter, fd_gradient_oracle
from .ops import (
    EPS,
    EmptyRegionError,
    InvalidInputError,
    bilinear_upsample,
    minmax_normalize,
    occlude,
    pearson,
    topk_select,
)
from .perturbations import BATTERY, apply_perturbation

__all__ = [
    "BATTERY",
    "EPS",
    "EmptyRegionError",
    "FeatureBundle",
    "InvalidInputError",
    "METHOD_NAMES",
    "MetricRow",
    "MicroModel",
    "ModelAdapter",
    "RunConfig",
    "Sample",
    "aggregate",
    "apply_perturbation",
    "bilinear_upsample",
    "dea",
    "ega",
    "fd_gradient_oracle",
    "gpa",
    "insertion_gain",
    "leak_abs",
    "minmax_normalize",
    "occlude",
    "offtarget_deletion_drop",
    "pearson",
    "region_score",
    "ria",
    "run_benchmark",
    "select_target",
    "stability",
    "synth_sample",
    "target_deletion_drop",
    "time_explanation",
    "topk_select",
    "write_records",
]
