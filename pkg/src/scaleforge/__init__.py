"""Scale-shift benchmark construction toolkit for crowd localization.

The package turns box-annotated crowd datasets (or synthetic stand-ins)
into scale-homogeneous patches, partitions them into equal-mass scale
domains with balanced retention, and quantifies the distribution shift
between domains.  A matching-based evaluator scores point predictions
against the constructed benchmarks.
"""

from .annot import (
    BoxAnnotation,
    DatasetBundle,
    ImageRecord,
    PredictedPoint,
    PredictionSet,
    parse_dataset,
    parse_predictions,
    validate_bundle,
    write_dataset,
    write_predictions,
)
from .errors import BuildError, ContractError, ParseError, ValidationError
from .evalloc import (
    CalibrationReport,
    EvalResult,
    LocMetrics,
    MatchResult,
    confidence_from_map,
    ece,
    evaluate_predictions,
    localization_metrics,
    match_predictions,
)
from .mixture import EmConfig, GmmModel1D, GmmModel2D, fit_gmm_1d, fit_gmm_2d
from .partition import (
    BenchmarkManifest,
    DomainSpec,
    Trial,
    build_benchmark,
    equal_mass_boundaries,
    leave_one_out_trials,
    reshape_domain,
    search_sigmas,
)
from .regularize import FilterConfig, Patch, filter_patches, read_patches, segment_image, write_patches
from .shift import (
    BootstrapShift,
    LabeledScaleSamples,
    ShiftReport,
    bootstrap_shift,
    correlation_shift,
    diversity_shift,
    labeled_pair_from_patches,
    object_scale_kl,
    shift_report,
)
from .stats import (
    EmpiricalDistribution,
    geometric_edges,
    histogram,
    kl_divergence,
    pearson,
    scale_position_correlations,
    shared_edges,
    spearman,
)

__version__ = "0.1.0"

__all__ = [
    "BoxAnnotation", "DatasetBundle", "ImageRecord", "PredictedPoint", "PredictionSet",
    "parse_dataset", "parse_predictions", "validate_bundle", "write_dataset", "write_predictions",
    "BuildError", "ContractError", "ParseError", "ValidationError",
    "CalibrationReport", "EvalResult", "LocMetrics", "MatchResult",
    "confidence_from_map", "ece", "evaluate_predictions", "localization_metrics", "match_predictions",
    "EmConfig", "GmmModel1D", "GmmModel2D", "fit_gmm_1d", "fit_gmm_2d",
    "BenchmarkManifest", "DomainSpec", "Trial", "build_benchmark", "equal_mass_boundaries",
    "leave_one_out_trials", "reshape_domain", "search_sigmas",
    "FilterConfig", "Patch", "filter_patches", "read_patches", "segment_image", "write_patches",
    "BootstrapShift", "LabeledScaleSamples", "ShiftReport", "bootstrap_shift", "correlation_shift",
    "diversity_shift", "labeled_pair_from_patches", "object_scale_kl", "shift_report",
    "EmpiricalDistribution", "geometric_edges", "histogram", "kl_divergence",
    "pearson", "scale_position_correlations", "shared_edges", "spearman",
    "__version__",
]
